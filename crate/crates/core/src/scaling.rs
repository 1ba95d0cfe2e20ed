//! Parameter scaling of gaits and path integrals for half-periods and
//! displacements.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{local_connection, potential, reduced_mass_matrix};
use crate::error::{Error, Result};
use crate::integrate::{integrate, Tolerances};
use crate::dynamics::{total_energy, ShapeState};
use crate::modal::{BrakeOrbit, NnmGait};
use crate::orbits::{measure_orbit, NboOptions, PeriodicOrbit};
use crate::params::ModelParams;
use crate::sim::{net_motion, run_switching_gait, SwitchOptions, SwitchPlan};

/// Ratios `new / old` of stiffness, link mass and link length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamScaling {
    pub k: f64,
    pub m: f64,
    pub l: f64,
}

impl Default for ParamScaling {
    fn default() -> Self {
        Self { k: 1.0, m: 1.0, l: 1.0 }
    }
}

impl ParamScaling {
    pub fn new(k: f64, m: f64, l: f64) -> Result<Self> {
        if k > 0.0 && m > 0.0 && l > 0.0 {
            Ok(Self { k, m, l })
        } else {
            Err(Error::InvalidParams(format!("scaling ratios must be positive: {k}, {m}, {l}")))
        }
    }

    /// Scaling by `self` followed by `other`.
    pub fn then(&self, other: &Self) -> Self {
        Self {
            k: self.k * other.k,
            m: self.m * other.m,
            l: self.l * other.l,
        }
    }

    /// Parameters with scaled stiffness, masses, inertias and lengths.
    pub fn apply(&self, p: &ModelParams) -> ModelParams {
        ModelParams {
            h: p.h * self.l,
            r: p.r * self.l,
            mass: p.mass.map(|x| x * self.m),
            inertia: p.inertia.map(|x| x * self.m * self.l * self.l),
            stiffness: p.stiffness.map(|x| x * self.k),
            ..*p
        }
    }
}

/// Period, displacement, mean speed and energy of a gait.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitFigures {
    pub period: f64,
    pub d: f64,
    pub v_avg: f64,
    pub energy: f64,
}

/// Predicted figures of a gait after a parameter change.
pub fn scale_gait(old: &GaitFigures, s: &ParamScaling) -> GaitFigures {
    GaitFigures {
        period: old.period * s.l * (s.m / s.k).sqrt(),
        d: old.d * s.l,
        v_avg: old.v_avg * (s.k / s.m).sqrt(),
        energy: old.energy * s.k,
    }
}

impl ParamScaling {
    /// Factor applied to all durations.
    pub fn time_factor(&self) -> f64 {
        self.l * (self.m / self.k).sqrt()
    }
}

/// Predicted against re-simulated figures of one scaled gait.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub predicted: GaitFigures,
    pub measured: GaitFigures,
    /// Largest relative error over period, displacement, speed and energy.
    pub max_rel_error: f64,
    /// Largest distance between the two shape paths at equal phase [rad].
    pub path_distance: f64,
}

impl ScalingCheck {
    fn new(predicted: GaitFigures, measured: GaitFigures, path_distance: f64) -> Self {
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(f64::MIN_POSITIVE);
        let max_rel_error = rel(predicted.period, measured.period)
            .max(rel(predicted.d, measured.d))
            .max(rel(predicted.v_avg, measured.v_avg))
            .max(rel(predicted.energy, measured.energy));
        Self {
            predicted,
            measured,
            max_rel_error,
            path_distance,
        }
    }
}

/// Shape samples at `n + 1` equally spaced phases of a period.
fn phase_samples(at: impl Fn(f64) -> Option<[f64; 8]>, period: f64, n: usize) -> Result<Vec<[f64; 2]>> {
    (0..=n)
        .map(|i| {
            let y = at(period * i as f64 / n as f64).ok_or_else(|| Error::Degenerate("period not covered".into()))?;
            Ok([y[0], y[1]])
        })
        .collect()
}

fn max_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
        .fold(0.0, f64::max)
}

/// Re-simulates a switching gait under scaled parameters and compares it
/// with the predicted figures.
pub fn check_nnm_scaling(
    gait: &NnmGait,
    params: &ModelParams,
    s: &ParamScaling,
    opts: &SwitchOptions,
) -> Result<ScalingCheck> {
    let run = |p: &ModelParams, plan: &SwitchPlan| -> Result<(GaitFigures, Vec<[f64; 2]>)> {
        let traj = run_switching_gait(plan, 1, p, opts)?;
        let period = traj.duration();
        let (d, _) = net_motion(&traj);
        let energy = total_energy(&p.with_r_eq(plan.eq_a), &ShapeState::at_rest(plan.start))?;
        let path = phase_samples(|t| traj.state_at(t), period, 400)?;
        Ok((
            GaitFigures {
                period,
                d,
                v_avg: d / period,
                energy,
            },
            path,
        ))
    };
    let plan = gait.plan();
    let (old, old_path) = run(params, &plan)?;
    let f = s.time_factor();
    let scaled_plan = SwitchPlan {
        t_half_a: plan.t_half_a * f,
        t_half_b: plan.t_half_b * f,
        ..plan
    };
    let (new, new_path) = run(&s.apply(params), &scaled_plan)?;
    Ok(ScalingCheck::new(scale_gait(&old, s), new, max_distance(&old_path, &new_path)))
}

/// Re-simulates a periodic orbit under scaled parameters, with rates divided
/// by the time factor, and compares it with the predicted figures.
pub fn check_orbit_scaling(
    orbit: &PeriodicOrbit,
    params: &ModelParams,
    s: &ParamScaling,
    opts: &NboOptions,
) -> Result<ScalingCheck> {
    let f = s.time_factor();
    let x = orbit.initial;
    let p = s.apply(&params.with_r_eq(orbit.r_eq));
    let scaled = measure_orbit([x[0], x[1], x[2] / f, x[3] / f], orbit.period * f, &p, opts)?;
    let figures = |o: &PeriodicOrbit| GaitFigures {
        period: o.period,
        d: o.displacement,
        v_avg: o.v_avg(),
        energy: o.energy,
    };
    let shape = |o: &PeriodicOrbit| o.path.iter().map(|y| [y[0], y[1]]).collect::<Vec<_>>();
    let dist = if orbit.path.len() == scaled.path.len() {
        max_distance(&shape(orbit), &shape(&scaled))
    } else {
        f64::NAN
    };
    Ok(ScalingCheck::new(scale_gait(&figures(orbit), s), figures(&scaled), dist))
}

/// Fewest path samples accepted by the path integrals.
pub const MIN_PATH_SAMPLES: usize = 50;

/// Natural cubic spline through points at given knots.
struct Spline {
    knots: Vec<f64>,
    values: Vec<[f64; 2]>,
    second: Vec<[f64; 2]>,
}

impl Spline {
    fn new(knots: Vec<f64>, values: Vec<[f64; 2]>) -> Self {
        let n = knots.len();
        let mut second = vec![[0.0; 2]; n];
        if n > 2 {
            // tridiagonal solve for interior second derivatives
            let mut c = vec![0.0; n];
            let mut d = vec![[0.0; 2]; n];
            for i in 1..n - 1 {
                let (h0, h1) = (knots[i] - knots[i - 1], knots[i + 1] - knots[i]);
                let a = h0 / 6.0;
                let b = (h0 + h1) / 3.0 - a * c[i - 1];
                c[i] = h1 / 6.0 / b;
                for k in 0..2 {
                    let rhs = (values[i + 1][k] - values[i][k]) / h1 - (values[i][k] - values[i - 1][k]) / h0;
                    d[i][k] = (rhs - a * d[i - 1][k]) / b;
                }
            }
            for i in (1..n - 1).rev() {
                for k in 0..2 {
                    second[i][k] = d[i][k] - c[i] * second[i + 1][k];
                }
            }
        }
        Self { knots, values, second }
    }

    /// Value and first derivative at `s`.
    fn eval(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let n = self.knots.len();
        let i = self.knots.partition_point(|&k| k <= s).clamp(1, n - 1) - 1;
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let h = x1 - x0;
        let (a, b) = ((x1 - s) / h, (s - x0) / h);
        let mut v = [0.0; 2];
        let mut dv = [0.0; 2];
        for k in 0..2 {
            let (y0, y1, m0, m1) = (self.values[i][k], self.values[i + 1][k], self.second[i][k], self.second[i + 1][k]);
            v[k] = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
            dv[k] = (y1 - y0) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        }
        (v, dv)
    }
}

/// Spline through a shape path over normalized chord length.
fn path_spline(path: &[[f64; 2]]) -> Result<Spline> {
    if path.len() < MIN_PATH_SAMPLES {
        return Err(Error::PathTooCoarse {
            samples: path.len(),
            required: MIN_PATH_SAMPLES,
        });
    }
    let mut knots = vec![0.0];
    let mut values = vec![path[0]];
    for p in &path[1..] {
        let last = *values.last().expect("nonempty");
        let ds = (p[0] - last[0]).hypot(p[1] - last[1]);
        // drop repeated points
        if ds > 1e-14 {
            knots.push(knots.last().expect("nonempty") + ds);
            values.push(*p);
        }
    }
    let total = *knots.last().expect("nonempty");
    if !(total > 0.0) {
        return Err(Error::Degenerate("path has no length".into()));
    }
    knots.iter_mut().for_each(|k| *k /= total);
    Ok(Spline::new(knots, values))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// Legendre polynomial.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Time between the turning points of a brake orbit from its path alone:
/// `∫ √(r′ᵀ M̃ r′) / √(2 (E − V(r))) ds` over the normalized path.
///
/// The inverse square-root end behavior is removed by `s = sin²u`, after which
/// the integrand is smooth and composite Gauss–Legendre converges quickly.
pub fn landau_half_period(orbit: &BrakeOrbit, params: &ModelParams) -> Result<f64> {
    let p = params.with_r_eq(orbit.r_eq);
    let spline = path_spline(&orbit.path)?;
    let v_at = |r: [f64; 2]| potential(&p, &Vector2::from(r));
    // turning-point energy, averaged over both ends
    let e = 0.5 * (v_at(orbit.path[0]) + v_at(*orbit.path.last().expect("nonempty")));
    let integrand = |s: f64| -> Result<f64> {
        let (r, dr) = spline.eval(s);
        let m = reduced_mass_matrix(&p, &Vector2::from(r))?;
        let dr = Vector2::from(dr);
        let kin = dr.dot(&(m * dr));
        let gap = 2.0 * (e - v_at(r));
        Ok((kin / gap.max(f64::MIN_POSITIVE)).sqrt())
    };
    let rule = gauss_legendre(8);
    let panels = 64;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut total = 0.0;
    for k in 0..panels {
        let (a, b) = (half_pi * k as f64 / panels as f64, half_pi * (k + 1) as f64 / panels as f64);
        for &(x, w) in &rule {
            let u = 0.5 * (a + b) + 0.5 * (b - a) * x;
            let (su, cu) = u.sin_cos();
            let s = su * su;
            total += 0.5 * (b - a) * w * integrand(s)? * 2.0 * su * cu;
        }
    }
    Ok(total)
}

/// Net world motion of the central body along a shape path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathMotion {
    /// Distance between start and end positions [m].
    pub d: f64,
    pub rotation: f64,
    /// Final position in the initial body frame.
    pub end: [f64; 2],
    /// `-∫ [A r′]_x ds`, the longitudinal body-frame integral [m].
    pub longitudinal: f64,
}

/// Reconstructs the world motion produced by traversing a shape path, by
/// integrating `ġ = g ξ` with `ξ = -A(r) r′` in the path parameter.
pub fn displacement_from_path(path: &[[f64; 2]], params: &ModelParams, tol: Tolerances) -> Result<PathMotion> {
    let spline = path_spline(path)?;
    let sys = |s: f64, y: &[f64; 4]| -> Result<[f64; 4]> {
        let (r, dr) = spline.eval(s);
        let xi = -(local_connection(params, &Vector2::from(r))? * Vector2::from(dr));
        let (sn, cs) = y[2].sin_cos();
        Ok([cs * xi[0] - sn * xi[1], sn * xi[0] + cs * xi[1], xi[2], xi[0]])
    };
    let y = integrate(&sys, 0.0, [0.0; 4], 1.0, tol)?;
    Ok(PathMotion {
        d: y[0].hypot(y[1]),
        rotation: y[2],
        end: [y[0], y[1]],
        longitudinal: y[3],
    })
}
