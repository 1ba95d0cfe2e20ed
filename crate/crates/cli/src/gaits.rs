//! Gait artifacts on disk.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use snake_modes::modal::{NnmGait, RejectionCounts};
use snake_modes::orbits::{OrbitFamily, PeriodicOrbit};

/// Output of `find nnm-gaits`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaitList {
    pub samples: usize,
    pub range: [f64; 2],
    pub crossings: usize,
    pub rejected: RejectionCounts,
    pub gaits: Vec<NnmGait>,
}

pub enum GaitSet {
    Nnm(Vec<NnmGait>),
    Nbo(Vec<PeriodicOrbit>),
}

impl GaitSet {
    pub fn len(&self) -> usize {
        match self {
            GaitSet::Nnm(g) => g.len(),
            GaitSet::Nbo(o) => o.len(),
        }
    }
}

/// Reads a gait list, an orbit, a list of orbits or an orbit family.
pub fn load(path: &Path) -> Result<GaitSet> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    if let Ok(l) = serde_json::from_value::<GaitList>(v.clone()) {
        return Ok(GaitSet::Nnm(l.gaits));
    }
    if let Ok(g) = serde_json::from_value::<Vec<NnmGait>>(v.clone()) {
        if !g.is_empty() {
            return Ok(GaitSet::Nnm(g));
        }
    }
    if let Ok(f) = serde_json::from_value::<OrbitFamily>(v.clone()) {
        return Ok(GaitSet::Nbo(f.orbits));
    }
    if let Ok(o) = serde_json::from_value::<PeriodicOrbit>(v.clone()) {
        return Ok(GaitSet::Nbo(vec![o]));
    }
    if let Ok(o) = serde_json::from_value::<Vec<PeriodicOrbit>>(v) {
        return Ok(GaitSet::Nbo(o));
    }
    bail!("{} holds no gaits or orbits", path.display())
}

/// Single orbit from an orbit file or the first orbit of a list or family.
pub fn load_orbit(path: &Path) -> Result<PeriodicOrbit> {
    match load(path)? {
        GaitSet::Nbo(o) if !o.is_empty() => Ok(o.into_iter().next().expect("nonempty")),
        _ => bail!("{} holds no orbit", path.display()),
    }
}
