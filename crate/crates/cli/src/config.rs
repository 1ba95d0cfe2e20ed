//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use snake_modes::efficiency::{BaselineEllipse, FrictionParams};
use snake_modes::integrate::Tolerances;
use snake_modes::orbits::EqMode;
use snake_modes::ModelParams;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Model parameter file, relative to the config file.
    pub params: Option<PathBuf>,
    /// Seed for every random sample drawn by a command.
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: TolConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub nbo: NboConfig,
    pub friction: Option<FrictionParams>,
    pub baseline: Option<BaselineEllipse>,
}

/// Integration tolerances for simulation and evaluation.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolConfig {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for TolConfig {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12 }
    }
}

impl TolConfig {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances::new(self.rtol, self.atol)
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub samples: Option<usize>,
    pub range: Option<[f64; 2]>,
    pub e_max: Option<f64>,
    pub dedup_tol: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NboConfig {
    pub segments: Option<usize>,
    pub eq_mode: Option<EqMode>,
    pub min_speed: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("config: cannot read {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("config: {}", path.display()))?;
        if let Some(p) = &cfg.params {
            if p.is_relative() {
                cfg.params = Some(path.parent().unwrap_or(Path::new(".")).join(p));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.params {
            if !p.is_file() {
                bail!("config: params file {} does not exist", p.display());
            }
        }
        let t = &self.tolerances;
        if !(t.rtol > 0.0 && t.atol > 0.0) {
            bail!("config: tolerances must be positive");
        }
        if let Some(d) = self.scan.dedup_tol {
            if !(d > 0.0) {
                bail!("config: scan.dedup_tol must be positive");
            }
        }
        if let Some(f) = &self.friction {
            f.validate().context("config")?;
        }
        Ok(())
    }

    /// Model parameters from `override_path`, the configured file, or the
    /// defaults, in that order.
    pub fn model(&self, override_path: Option<&Path>) -> Result<ModelParams> {
        match override_path.or(self.params.as_deref()) {
            Some(p) => ModelParams::from_file(p).with_context(|| format!("config: {}", p.display())),
            None => Ok(ModelParams::default()),
        }
    }

    pub fn friction(&self) -> FrictionParams {
        self.friction.unwrap_or_default()
    }

    pub fn baseline(&self) -> BaselineEllipse {
        self.baseline.unwrap_or_default()
    }
}

/// Parses `a:b`.
pub fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected a:b, got {s}"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if a < b {
        Ok((a, b))
    } else {
        Err(format!("empty range {s}"))
    }
}
