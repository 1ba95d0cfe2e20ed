//! Model invariant checks on seeded random states.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::constrained::{connection_from_constraints, ConstrainedModel};
use crate::dynamics::full::{constraint_matrix, Coords};
use crate::dynamics::{connection_divisor, local_connection, Pose, ShapeState};
use crate::error::Result;
use crate::integrate::Tolerances;
use crate::params::ModelParams;
use crate::sim::{integrate_free, SimOptions};

/// Outcome of one invariant check: the worst observed value against its limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub samples: usize,
    pub passed: bool,
}

impl CheckReport {
    fn new(name: &str, value: f64, limit: f64, samples: usize) -> Self {
        Self {
            name: name.to_string(),
            value,
            limit,
            samples,
            passed: value.is_finite() && value < limit,
        }
    }
}

/// Shapes with `|α_i| < π - 0.3` and `|Q| ≥ q_min`, drawn from a seeded stream.
pub fn random_shapes(params: &ModelParams, seed: u64, n: usize, q_min: f64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lim = std::f64::consts::PI - 0.3;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let r = [rng.gen_range(-lim..lim), rng.gen_range(-lim..lim)];
        if connection_divisor(params, &Vector2::from(r)).abs() >= q_min {
            out.push(r);
        }
    }
    out
}

/// Random states whose unactuated flow stays clear of the singular shapes for
/// `duration`.
pub fn random_states(params: &ModelParams, seed: u64, n: usize, duration: f64) -> Vec<ShapeState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let opts = SimOptions::default();
    while out.len() < n {
        let r = random_shapes(params, rng.gen(), 1, 0.3)[0];
        let s = ShapeState::new(r, [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        if let Ok(t) = integrate_free(&s, params, duration, &opts) {
            if t.truncated_at.is_none() {
                out.push(s);
            }
        }
    }
    out
}

/// Largest entry difference between the closed-form local connection and the
/// one solved from the wheel constraints.
pub fn connection_consistency(params: &ModelParams, shapes: &[[f64; 2]], limit: f64) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for r in shapes {
        let r = Vector2::from(*r);
        let d = local_connection(params, &r)? - connection_from_constraints(params, &r)?;
        worst = worst.max(d.amax());
    }
    Ok(CheckReport::new("connection consistency", worst, limit, shapes.len()))
}

/// Largest lateral wheel speed along reduced flows, measured with the
/// constraint rows of the full model.
pub fn lateral_speed(params: &ModelParams, states: &[ShapeState], duration: f64, limit: f64) -> Result<CheckReport> {
    let opts = SimOptions {
        sample_dt: Some(duration / 50.0),
        ..SimOptions::default()
    };
    let mut worst: f64 = 0.0;
    for s in states {
        let traj = integrate_free(s, params, duration, &opts)?;
        for smp in &traj.samples {
            let xi = -(local_connection(params, &Vector2::from(smp.r))? * Vector2::from(smp.dr));
            let (sn, cs) = smp.pose.theta.sin_cos();
            let q = Coords::from([smp.pose.x, smp.pose.y, smp.pose.theta, smp.r[0], smp.r[1]]);
            let dq = Coords::from([cs * xi[0] - sn * xi[1], sn * xi[0] + cs * xi[1], xi[2], smp.dr[0], smp.dr[1]]);
            worst = worst.max((constraint_matrix(params, &q) * dq).amax());
        }
    }
    Ok(CheckReport::new("lateral wheel speed", worst, limit, states.len()))
}

/// Largest difference in shape, rate and pose between the reduced model and
/// the five-coordinate constrained model after `duration`.
pub fn reduced_vs_constrained(
    params: &ModelParams,
    states: &[ShapeState],
    duration: f64,
    limit: f64,
) -> Result<CheckReport> {
    let tol = Tolerances::new(1e-11, 1e-13);
    let opts = SimOptions {
        tol,
        ..SimOptions::default()
    };
    let model = ConstrainedModel::new(*params);
    let mut worst: f64 = 0.0;
    for s in states {
        let red = integrate_free(s, params, duration, &opts)?;
        let end = red.last();
        let (q, dq) = model.simulate(&Pose::default(), s, duration, tol)?;
        let diffs = [
            q[3] - end.r[0],
            q[4] - end.r[1],
            dq[3] - end.dr[0],
            dq[4] - end.dr[1],
            q[0] - end.pose.x,
            q[1] - end.pose.y,
            q[2] - end.pose.theta,
        ];
        worst = diffs.iter().fold(worst, |w, d| w.max(d.abs()));
    }
    Ok(CheckReport::new("reduced vs constrained", worst, limit, states.len()))
}

/// Largest relative energy drift over unactuated runs of `duration`.
pub fn energy_drift(params: &ModelParams, states: &[ShapeState], duration: f64, limit: f64) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for s in states {
        let traj = integrate_free(s, params, duration, &SimOptions::default())?;
        traj.check()?;
        let e0 = traj.first().energy;
        for smp in &traj.samples {
            worst = worst.max((smp.energy - e0).abs() / e0.abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok(CheckReport::new("energy conservation", worst, limit, states.len()))
}

/// The validation suite: connection, lateral speed, reduced-vs-constrained
/// agreement and energy conservation, all seeded by `seed`.
pub fn validation_suite(params: &ModelParams, seed: u64) -> Result<Vec<CheckReport>> {
    let shapes = random_shapes(params, seed, 200, 0.05);
    let states = random_states(params, seed.wrapping_add(1), 3, 1.0);
    let long = random_states(params, seed.wrapping_add(2), 1, 10.0);
    Ok(vec![
        connection_consistency(params, &shapes, 1e-10)?,
        lateral_speed(params, &states, 1.0, 1e-10)?,
        reduced_vs_constrained(params, &states[..1], 1.0, 1e-6)?,
        energy_drift(params, &long, 10.0, 1e-6)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_seeded() {
        let p = ModelParams::default();
        assert_eq!(random_shapes(&p, 3, 5, 0.1), random_shapes(&p, 3, 5, 0.1));
        assert_ne!(random_shapes(&p, 3, 5, 0.1), random_shapes(&p, 4, 5, 0.1));
    }

    #[test]
    fn reports_flag_failures() {
        assert!(CheckReport::new("x", 1e-12, 1e-10, 1).passed);
        assert!(!CheckReport::new("x", 1e-9, 1e-10, 1).passed);
        assert!(!CheckReport::new("x", f64::NAN, 1e-10, 1).passed);
    }
}
