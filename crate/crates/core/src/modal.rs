//! Nonlinear normal modes: shooting for brake orbits, generator continuation,
//! generator intersections and two-mode switching gaits.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{connection_divisor, potential, reduced_mass_matrix};
use crate::error::{Error, Result};
use crate::integrate::{integrate_with, Tolerances};
use crate::params::ModelParams;
use crate::efficiency::{switch_energy, SwitchCost};
use crate::shooting::{flow_tangents, gauss_newton, NewtonOptions, Seed};
use crate::sim::{net_motion, run_switching_gait, ShapeFlow, SwitchOptions, SwitchPlan};

/// Reflection across the diagonal `α1 = -α2`.
pub fn mirror(r: [f64; 2]) -> [f64; 2] {
    [-r[1], -r[0]]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// Along the diagonal.
    #[serde(rename = "G_parallel")]
    Parallel,
    /// Starting orthogonal to the diagonal.
    #[serde(rename = "G_perp")]
    Perp,
}

impl Branch {
    /// Unit direction of the branch in shape space.
    pub fn direction(self) -> [f64; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Branch::Parallel => [s, -s],
            Branch::Perp => [s, s],
        }
    }
}

/// Linear oscillation about an equilibrium.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearMode {
    /// Angular eigenfrequency [rad/s].
    pub omega: f64,
    /// Mass-normalized eigenvector, `vᵀ M̃ v = 1`.
    pub vector: [f64; 2],
}

impl LinearMode {
    pub fn branch(&self) -> Branch {
        let [a, b] = self.vector;
        if (a - b).abs() >= (a + b).abs() {
            Branch::Parallel
        } else {
            Branch::Perp
        }
    }

    pub fn half_period(&self) -> f64 {
        std::f64::consts::PI / self.omega
    }
}

/// Eigenmodes of `(∂²V/∂r², M̃(r_eq))`, by increasing frequency.
pub fn linear_modes(r_eq: [f64; 2], params: &ModelParams) -> Result<[LinearMode; 2]> {
    let m = reduced_mass_matrix(params, &Vector2::from(r_eq))?;
    let k = Matrix2::new(params.stiffness[0], 0.0, 0.0, params.stiffness[1]);
    let chol = m.cholesky().ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
    let l_inv = chol.l().try_inverse().ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
    let c = l_inv * k * l_inv.transpose();
    let c = (c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut modes: Vec<LinearMode> = (0..2)
        .map(|i| {
            let v = l_inv.transpose() * eig.eigenvectors.column(i);
            let v = if v[0] < 0.0 { -v } else { v };
            LinearMode {
                omega: eig.eigenvalues[i].max(0.0).sqrt(),
                vector: [v[0], v[1]],
            }
        })
        .collect();
    modes.sort_by(|a, b| a.omega.total_cmp(&b.omega));
    Ok([modes[0], modes[1]])
}

/// Linear mode of an equilibrium matching a branch.
pub fn linear_mode(r_eq: [f64; 2], branch: Branch, params: &ModelParams) -> Result<LinearMode> {
    let modes = linear_modes(r_eq, params)?;
    let d = branch.direction();
    let score = |m: &LinearMode| {
        let n = m.vector[0].hypot(m.vector[1]);
        (m.vector[0] * d[0] + m.vector[1] * d[1]).abs() / n
    };
    Ok(if score(&modes[0]) >= score(&modes[1]) { modes[0] } else { modes[1] })
}

/// Oscillation between two turning points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrakeOrbit {
    pub r_eq: [f64; 2],
    pub branch: Branch,
    /// Turning point the orbit starts from.
    pub p: [f64; 2],
    /// Turning point reached after half a period.
    pub p_prime: [f64; 2],
    pub t_half: f64,
    pub energy: f64,
    /// Shooting residual norm.
    pub residual: f64,
    /// Shape path from `p` to `p_prime`, uniform in time.
    pub path: Vec<[f64; 2]>,
}

impl BrakeOrbit {
    pub fn period(&self) -> f64 {
        2.0 * self.t_half
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootOptions {
    pub tol: Tolerances,
    pub newton: NewtonOptions,
    /// Number of path intervals recorded for the returned orbit.
    pub path_samples: usize,
    /// Orbits whose path comes closer than this to `Q = 0` are rejected.
    pub q_margin: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::new(1e-11, 1e-13),
            newton: NewtonOptions::default(),
            path_samples: 200,
            q_margin: 1e-3,
        }
    }
}

/// Linear-limit seed `(P, T_half)` for an energy level.
pub fn linear_seed(params: &ModelParams, branch: Branch, energy: f64) -> Result<([f64; 2], f64)> {
    let mode = linear_mode(params.r_eq, branch, params)?;
    let v = mode.vector;
    let stiff = params.stiffness[0] * v[0] * v[0] + params.stiffness[1] * v[1] * v[1];
    let a = (2.0 * energy / stiff).sqrt();
    // orient the seed along the branch direction
    let d = branch.direction();
    let a = if v[0] * d[0] + v[1] * d[1] >= 0.0 { a } else { -a };
    Ok(([params.r_eq[0] + a * v[0], params.r_eq[1] + a * v[1]], mode.half_period()))
}

/// Samples a shape path from rest at `p` over `[0, t]`.
pub(crate) fn sample_path(params: &ModelParams, y0: [f64; 4], t: f64, n: usize, tol: Tolerances) -> Result<Vec<[f64; 4]>> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(y0);
    let mut k = 1;
    let q = |y: &[f64; 4]| connection_divisor(params, &Vector2::new(y[0], y[1]));
    integrate_with(&ShapeFlow::new(*params), 0.0, y0, t, tol, |step| {
        // a path can pass through Q = 0 between output samples
        if q(&step.y0).signum() != q(&step.y1).signum() {
            return Err(Error::SingularityApproached { t: step.t1 });
        }
        while k <= n {
            let tk = t * k as f64 / n as f64;
            if tk > step.t1 {
                break;
            }
            out.push(if k == n { step.y1 } else { step.interpolate(tk) });
            k += 1;
        }
        Ok(())
    })?;
    Ok(out)
}

pub(crate) fn min_divisor(params: &ModelParams, path: &[[f64; 2]]) -> f64 {
    path.iter()
        .map(|r| connection_divisor(params, &Vector2::from(*r)).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Brake orbit of energy `e_target` on the given branch.
///
/// Newton iteration on the turning point `P` and half-period `T` with
/// residuals `ṙ(T) = 0` and `V(P) = E`, integrating from rest at `P`.
pub fn shoot_brake_orbit(
    params: &ModelParams,
    branch: Branch,
    e_target: f64,
    seed: Option<([f64; 2], f64)>,
    opts: &ShootOptions,
) -> Result<BrakeOrbit> {
    if !(e_target > 0.0) {
        return Err(Error::Degenerate(format!("energy must be positive, got {e_target}")));
    }
    let (p0, t0) = match seed {
        Some(s) => s,
        None => linear_seed(params, branch, e_target)?,
    };
    let tol = opts.tol;
    let system = |z: &DVector<f64>, jac: bool| -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let y0 = [z[0], z[1], 0.0, 0.0];
        let seeds: &[Seed] = if jac { &[Seed::state(0), Seed::state(1)] } else { &[] };
        let (y, tan) = flow_tangents(params, &y0, z[2], tol, seeds)?;
        let pr = Vector2::new(z[0], z[1]);
        let f = DVector::from_vec(vec![y[2], y[3], potential(params, &pr) - e_target]);
        let j = jac.then(|| {
            let acc = ShapeFlow::new(*params);
            let fy = crate::integrate::OdeSystem::rhs(&acc, z[2], &y).unwrap_or([0.0; 4]);
            let grad = [
                params.stiffness[0] * (z[0] - params.r_eq[0]),
                params.stiffness[1] * (z[1] - params.r_eq[1]),
            ];
            DMatrix::from_row_slice(
                3,
                3,
                &[
                    tan[0][2], tan[1][2], fy[2], //
                    tan[0][3], tan[1][3], fy[3], //
                    grad[0], grad[1], 0.0,
                ],
            )
        });
        Ok((f, j))
    };
    let sol = gauss_newton(system, DVector::from_vec(vec![p0[0], p0[1], t0]), &opts.newton)?;
    let (p, t_half) = ([sol.z[0], sol.z[1]], sol.z[2]);
    if !(t_half > 0.0) {
        return Err(Error::NoConvergence {
            iterations: sol.iterations,
            residual: sol.residual,
        });
    }
    let states = sample_path(params, [p[0], p[1], 0.0, 0.0], t_half, opts.path_samples, tol)?;
    let path: Vec<[f64; 2]> = states.iter().map(|y| [y[0], y[1]]).collect();
    if min_divisor(params, &path) < opts.q_margin {
        return Err(Error::SingularityApproached { t: t_half });
    }
    Ok(BrakeOrbit {
        r_eq: params.r_eq,
        branch,
        p,
        p_prime: *path.last().expect("path has samples"),
        t_half,
        energy: e_target,
        residual: sol.residual,
        path,
    })
}

/// One point of a generator curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSample {
    pub energy: f64,
    pub p: [f64; 2],
    pub p_prime: [f64; 2],
    pub t_half: f64,
}

/// Turning-point curve of one equilibrium's family of modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub r_eq: [f64; 2],
    pub branch: Branch,
    pub samples: Vec<GeneratorSample>,
    /// Why the continuation stopped before the requested energy, if it did.
    pub truncated: Option<String>,
}

impl Generator {
    /// Turning points `P(E)` in order of energy.
    pub fn curve(&self) -> Vec<[f64; 2]> {
        self.samples.iter().map(|s| s.p).collect()
    }

    /// Opposite turning points `P′(E)`.
    pub fn far_curve(&self) -> Vec<[f64; 2]> {
        self.samples.iter().map(|s| s.p_prime).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub shoot: ShootOptions,
    /// Initial continuation step in the weighted `(P, E/k)` metric.
    pub ds: f64,
    pub ds_min: f64,
    /// Largest step, also the bound on turning-point change between samples [rad].
    pub ds_max: f64,
    /// Stop once a turning point comes this close to `|α| = π` [rad].
    pub pi_margin: f64,
    pub max_samples: usize,
    /// Stop at the first energy maximum, keeping the curve single-valued in energy.
    pub stop_at_fold: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            shoot: ShootOptions {
                tol: Tolerances::new(1e-10, 1e-12),
                path_samples: 64,
                newton: NewtonOptions {
                    max_iter: 8,
                    tol: 1e-8,
                    ..NewtonOptions::default()
                },
                ..ShootOptions::default()
            },
            ds: 0.02,
            ds_min: 1e-4,
            ds_max: 0.04,
            pi_margin: 0.05,
            max_samples: 2000,
            stop_at_fold: true,
        }
    }
}

/// Whether the brake orbits of a branch are mirror images of themselves, so
/// that half an orbit determines the whole.
pub fn mirror_symmetric(params: &ModelParams, branch: Branch) -> bool {
    branch == Branch::Perp
        && (params.r_eq[0] + params.r_eq[1]).abs() < 1e-12
        && params.stiffness[0] == params.stiffness[1]
        && params.mass[1] == params.mass[2]
        && params.inertia[1] == params.inertia[2]
}

/// Turning-point conditions of an orbit started from rest at `p`, integrated
/// over `t`, with their derivatives in `(p1, p2, t)`.
///
/// With `half` the orbit is closed by symmetry: after `t = T/2` it meets the
/// diagonal moving normal to it. Otherwise `t = T` and the velocity vanishes.
#[allow(clippy::type_complexity)]
fn turning_conditions(
    params: &ModelParams,
    p: [f64; 2],
    t: f64,
    jac: bool,
    tol: Tolerances,
    half: bool,
) -> Result<([f64; 2], Option<[[f64; 3]; 2]>)> {
    let y0 = [p[0], p[1], 0.0, 0.0];
    let seeds: &[Seed] = if jac { &[Seed::state(0), Seed::state(1)] } else { &[] };
    let (y, tan) = flow_tangents(params, &y0, t, tol, seeds)?;
    let rows: [[f64; 4]; 2] = if half {
        [[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]]
    } else {
        [[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    };
    let dot = |a: &[f64; 4], b: &[f64; 4]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let f = [dot(&rows[0], &y), dot(&rows[1], &y)];
    let j = if jac {
        let fy = crate::integrate::OdeSystem::rhs(&ShapeFlow::new(*params), t, &y)?;
        Some(rows.map(|row| [dot(&row, &tan[0]), dot(&row, &tan[1]), dot(&row, &fy)]))
    } else {
        None
    };
    Ok((f, j))
}

/// Residual of a brake orbit in the unknowns `(P1, P2, t, E)`.
fn brake_system(
    params: &ModelParams,
    z: &[f64; 4],
    jac: bool,
    tol: Tolerances,
    half: bool,
) -> Result<([f64; 3], Option<[[f64; 4]; 3]>)> {
    let (f, j) = turning_conditions(params, [z[0], z[1]], z[2], jac, tol, half)?;
    let f = [f[0], f[1], potential(params, &Vector2::new(z[0], z[1])) - z[3]];
    let j = j.map(|j| {
        let g = [
            params.stiffness[0] * (z[0] - params.r_eq[0]),
            params.stiffness[1] * (z[1] - params.r_eq[1]),
        ];
        [
            [j[0][0], j[0][1], j[0][2], 0.0],
            [j[1][0], j[1][1], j[1][2], 0.0],
            [g[0], g[1], 0.0, -1.0],
        ]
    });
    Ok((f, j))
}

/// Unit tangent of the solution curve in the weighted metric.
fn curve_tangent(j: &[[f64; 4]; 3], w: &[f64; 4], prev: Option<&[f64; 4]>) -> [f64; 4] {
    let m = DMatrix::from_fn(4, 4, |i, k| if i < 3 { j[i][k] } else { 0.0 });
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let (imin, _) = svd.singular_values.argmin();
    let mut t: [f64; 4] = std::array::from_fn(|k| vt[(imin, k)]);
    let n = t.iter().zip(w).map(|(a, b)| a * a * b).sum::<f64>().sqrt();
    t.iter_mut().for_each(|a| *a /= n);
    let sign = match prev {
        Some(p) => t.iter().zip(p).zip(w).map(|((a, b), c)| a * b * c).sum::<f64>(),
        // initially move up in energy
        None => t[3],
    };
    if sign < 0.0 {
        t.iter_mut().for_each(|a| *a = -*a);
    }
    t
}

/// Traces a generator from the linear limit at energy `e_range.0`.
///
/// Pseudo-arclength continuation in `(P, T, E)`, so the curve is followed
/// through energy folds. Stops when the energy leaves `e_range`, a turning
/// point nears `|α| = π`, an orbit path nears the singular shapes, or the step
/// size collapses.
pub fn trace_generator(
    params: &ModelParams,
    branch: Branch,
    e_range: (f64, f64),
    opts: &TraceOptions,
) -> Generator {
    let mut gen = Generator {
        r_eq: params.r_eq,
        branch,
        samples: Vec::new(),
        truncated: None,
    };
    let first = match shoot_brake_orbit(params, branch, e_range.0, None, &opts.shoot) {
        Ok(o) => o,
        Err(e) => {
            gen.truncated = Some(format!("at E = {}: {e}", e_range.0));
            return gen;
        }
    };
    gen.samples.push(GeneratorSample {
        energy: first.energy,
        p: first.p,
        p_prime: first.p_prime,
        t_half: first.t_half,
    });
    let tol = opts.shoot.tol;
    let half = mirror_symmetric(params, branch);
    let span = if half { 0.5 } else { 1.0 };
    let kmean = 0.5 * (params.stiffness[0] + params.stiffness[1]);
    let w = [1.0, 1.0, 0.0, 1.0 / (kmean * kmean)];
    let mut z = [first.p[0], first.p[1], span * first.t_half, first.energy];
    let mut tangent: Option<[f64; 4]> = None;
    let mut jac = match brake_system(params, &z, true, tol, half) {
        Ok((_, Some(j))) => j,
        _ => {
            gen.truncated = Some(format!("tangent failed at E = {}", z[3]));
            return gen;
        }
    };
    let dir = branch.direction();
    let side = |z: &[f64; 4]| (z[0] - params.r_eq[0]) * dir[0] + (z[1] - params.r_eq[1]) * dir[1];
    let mut ds = opts.ds;
    while gen.samples.len() < opts.max_samples {
        let t = curve_tangent(&jac, &w, tangent.as_ref());
        let mut advanced = None;
        let mut singular = false;
        while ds >= opts.ds_min {
            let pred: [f64; 4] = std::array::from_fn(|i| z[i] + ds * t[i]);
            let system = |v: &DVector<f64>, jac: bool| -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
                let zz = [v[0], v[1], v[2], v[3]];
                let (f, j) = brake_system(params, &zz, jac, tol, half)?;
                let arc: f64 = (0..4).map(|i| w[i] * t[i] * (zz[i] - pred[i])).sum();
                let fv = DVector::from_vec(vec![f[0], f[1], f[2], arc]);
                let jm = j.map(|j| {
                    DMatrix::from_fn(4, 4, |r, c| if r < 3 { j[r][c] } else { w[c] * t[c] })
                });
                Ok((fv, jm))
            };
            match gauss_newton(system, DVector::from_row_slice(&pred), &opts.shoot.newton) {
                Ok(sol) if (sol.z[0] - z[0]).hypot(sol.z[1] - z[1]) <= 2.0 * opts.ds_max && sol.z[2] > 0.0 => {
                    let j = &sol.jacobian;
                    jac = std::array::from_fn(|r| std::array::from_fn(|c| j[(r, c)]));
                    advanced = Some([sol.z[0], sol.z[1], sol.z[2], sol.z[3]]);
                    break;
                }
                Ok(_) => ds *= 0.5,
                Err(e) => {
                    singular = matches!(
                        e,
                        Error::SingularShape { .. } | Error::IllConditioned { .. } | Error::SingularityApproached { .. }
                    );
                    ds *= 0.5;
                }
            }
        }
        let Some(next) = advanced else {
            gen.truncated = Some(if singular {
                format!("orbit nears the singular shapes at E = {}", z[3])
            } else {
                format!("continuation stalled at E = {}", z[3])
            });
            break;
        };
        if next[3] <= 0.0 || next[3] > e_range.1 {
            break;
        }
        if opts.stop_at_fold && next[3] < z[3] {
            gen.truncated = Some(format!("energy fold at E = {}", z[3]));
            break;
        }
        if side(&next) <= 0.0 {
            // the turning point has swept around to the far side: from here on
            // the curve retraces the opposite turning points
            gen.truncated = Some(format!("turning point returns across the equilibrium at E = {}", next[3]));
            break;
        }
        let states = match sample_path(params, [next[0], next[1], 0.0, 0.0], next[2], opts.shoot.path_samples, tol) {
            Ok(s) => s,
            Err(e) => {
                gen.truncated = Some(format!("at E = {}: {e}", next[3]));
                break;
            }
        };
        let path: Vec<[f64; 2]> = states.iter().map(|y| [y[0], y[1]]).collect();
        if min_divisor(params, &path) < opts.shoot.q_margin {
            gen.truncated = Some(format!("orbit nears the singular shapes at E = {}", next[3]));
            break;
        }
        z = next;
        tangent = Some(t);
        gen.samples.push(GeneratorSample {
            energy: z[3],
            p: [z[0], z[1]],
            p_prime: if half { mirror([z[0], z[1]]) } else { *path.last().expect("path has samples") },
            t_half: z[2] / span,
        });
        if z[..2].iter().any(|a| a.abs() > std::f64::consts::PI - opts.pi_margin) {
            gen.truncated = Some(format!("turning point near |alpha| = pi at E = {}", z[3]));
            break;
        }
        ds = (ds * 1.5).min(opts.ds_max);
    }
    gen
}

/// Proper crossing of segments `a0a1` and `b0b1`, as fractions along each.
/// Segments are half open so shared polyline vertices count once.
fn segment_crossing(a0: [f64; 2], a1: [f64; 2], b0: [f64; 2], b1: [f64; 2]) -> Option<(f64, f64)> {
    let da = [a1[0] - a0[0], a1[1] - a0[1]];
    let db = [b1[0] - b0[0], b1[1] - b0[1]];
    let cross = |u: [f64; 2], v: [f64; 2]| u[0] * v[1] - u[1] * v[0];
    let d = cross(da, db);
    if d == 0.0 {
        return None;
    }
    let w = [b0[0] - a0[0], b0[1] - a0[1]];
    let s = cross(w, db) / d;
    let t = cross(w, da) / d;
    ((0.0..1.0).contains(&s) && (0.0..1.0).contains(&t)).then_some((s, t))
}

fn bounds(curve: &[[f64; 2]]) -> [f64; 4] {
    curve.iter().fold([f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY], |b, p| {
        [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])]
    })
}

/// Crossing of two generator polylines before refinement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub p: [f64; 2],
    /// Half-periods interpolated from the samples on either side.
    pub t_half_a: f64,
    pub t_half_b: f64,
}

/// All crossings of the turning-point curves of two generators.
pub fn generator_crossings(ga: &Generator, gb: &Generator) -> Vec<Crossing> {
    let (ca, cb) = (ga.curve(), gb.curve());
    let (ba, bb) = (bounds(&ca), bounds(&cb));
    if ba[0] > bb[2] || bb[0] > ba[2] || ba[1] > bb[3] || bb[1] > ba[3] {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 1..ca.len() {
        for k in 1..cb.len() {
            if let Some((s, t)) = segment_crossing(ca[i - 1], ca[i], cb[k - 1], cb[k]) {
                let lerp = |a: f64, b: f64, f: f64| a + f * (b - a);
                out.push(Crossing {
                    p: [lerp(ca[i - 1][0], ca[i][0], s), lerp(ca[i - 1][1], ca[i][1], s)],
                    t_half_a: lerp(ga.samples[i - 1].t_half, ga.samples[i].t_half, s),
                    t_half_b: lerp(gb.samples[k - 1].t_half, gb.samples[k].t_half, t),
                });
            }
        }
    }
    out
}

/// Turning point shared by modes of two equilibria.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub p: [f64; 2],
    /// Opposite turning point, common to both modes.
    pub p_prime: [f64; 2],
    pub t_half_a: f64,
    pub t_half_b: f64,
    pub energy_a: f64,
    pub energy_b: f64,
    pub residual: f64,
}

/// Refines a crossing so that `p` is a turning point of a brake orbit about
/// each of the two equilibria.
pub fn refine_intersection(
    params: &ModelParams,
    a: ([f64; 2], Branch),
    b: ([f64; 2], Branch),
    guess: &Crossing,
    opts: &ShootOptions,
) -> Result<Intersection> {
    let (pa, pb) = (params.with_r_eq(a.0), params.with_r_eq(b.0));
    let (half_a, half_b) = (mirror_symmetric(&pa, a.1), mirror_symmetric(&pb, b.1));
    let span = |half: bool| if half { 0.5 } else { 1.0 };
    let tol = opts.tol;
    let system = |z: &DVector<f64>, jac: bool| -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let p = [z[0], z[1]];
        let (fa, ja) = turning_conditions(&pa, p, z[2], jac, tol, half_a)?;
        let (fb, jb) = turning_conditions(&pb, p, z[3], jac, tol, half_b)?;
        let f = DVector::from_vec(vec![fa[0], fa[1], fb[0], fb[1]]);
        let j = ja.zip(jb).map(|(ja, jb)| {
            DMatrix::from_row_slice(
                4,
                4,
                &[
                    ja[0][0], ja[0][1], ja[0][2], 0.0, //
                    ja[1][0], ja[1][1], ja[1][2], 0.0, //
                    jb[0][0], jb[0][1], 0.0, jb[0][2], //
                    jb[1][0], jb[1][1], 0.0, jb[1][2],
                ],
            )
        });
        Ok((f, j))
    };
    let z0 = DVector::from_vec(vec![
        guess.p[0],
        guess.p[1],
        span(half_a) * guess.t_half_a,
        span(half_b) * guess.t_half_b,
    ]);
    let sol = gauss_newton(system, z0, &opts.newton)?;
    let p = [sol.z[0], sol.z[1]];
    let (ta, tb) = (sol.z[2] / span(half_a), sol.z[3] / span(half_b));
    if !(ta > 0.0 && tb > 0.0) {
        return Err(Error::NoConvergence {
            iterations: sol.iterations,
            residual: sol.residual,
        });
    }
    let p_prime = if half_a {
        mirror(p)
    } else {
        let end = crate::shooting::flow(&pa, &[p[0], p[1], 0.0, 0.0], ta, tol)?;
        [end[0], end[1]]
    };
    let r = Vector2::from(p);
    Ok(Intersection {
        p,
        p_prime,
        t_half_a: ta,
        t_half_b: tb,
        energy_a: potential(&pa, &r),
        energy_b: potential(&pb, &r),
        residual: sol.residual,
    })
}

/// Shared turning points of two generators, refined by re-shooting.
///
/// Crossings whose refinement fails or drifts further than `max_shift` from
/// the polyline crossing are dropped.
pub fn intersect_generators(
    ga: &Generator,
    gb: &Generator,
    params: &ModelParams,
    opts: &ShootOptions,
    max_shift: f64,
) -> Result<Vec<Intersection>> {
    if (ga.r_eq[0] - gb.r_eq[0]).hypot(ga.r_eq[1] - gb.r_eq[1]) < 1e-12 {
        return Err(Error::Degenerate("generators share their equilibrium".into()));
    }
    Ok(generator_crossings(ga, gb)
        .iter()
        .filter_map(|c| {
            let x = refine_intersection(params, (ga.r_eq, ga.branch), (gb.r_eq, gb.branch), c, opts).ok()?;
            ((x.p[0] - c.p[0]).hypot(x.p[1] - c.p[1]) <= max_shift).then_some(x)
        })
        .collect())
}

/// Whether the closed loop formed by two paths sharing their end points is
/// free of self-crossings.
pub fn loop_is_simple(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    let (na, nb) = (a.len() - 1, b.len() - 1);
    for i in 1..=na {
        for k in 1..=nb {
            // segments touching the shared end points
            if (i == 1 && k == 1) || (i == na && k == nb) {
                continue;
            }
            if segment_crossing(a[i - 1], a[i], b[k - 1], b[k]).is_some() {
                return false;
            }
        }
    }
    true
}

/// Gait alternating between modes of two equilibria at shared turning points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnmGait {
    pub eq_a: [f64; 2],
    pub eq_b: [f64; 2],
    /// Start point; the mode of `eq_a` carries the shape from `p` to `p_prime`.
    pub p: [f64; 2],
    pub p_prime: [f64; 2],
    pub t_half_a: f64,
    pub t_half_b: f64,
    /// Mode energies at the shared turning points [J].
    pub energy_a: f64,
    pub energy_b: f64,
    /// Cost of the switch from `eq_a` to `eq_b` at `p_prime`.
    pub switch: SwitchCost,
    /// Period [s].
    pub period: f64,
    /// Net displacement of the central body per period [m].
    pub displacement: f64,
    /// Net heading change per period [rad].
    pub rotation: f64,
    /// Path length of the central body per period [m].
    pub arc_length: f64,
}

impl NnmGait {
    pub fn plan(&self) -> SwitchPlan {
        SwitchPlan {
            start: self.p,
            eq_a: self.eq_a,
            eq_b: self.eq_b,
            t_half_a: self.t_half_a,
            t_half_b: self.t_half_b,
        }
    }

    /// Mean speed [m/s].
    pub fn v_avg(&self) -> f64 {
        self.displacement / self.period
    }
}

/// Checks an intersection as a gait and measures it by simulating one period.
pub fn assemble_gait(
    params: &ModelParams,
    eq_a: [f64; 2],
    eq_b: [f64; 2],
    x: &Intersection,
    opts: &ScanOptions,
) -> std::result::Result<NnmGait, Rejection> {
    let tol = opts.refine.tol;
    let n = opts.path_samples;
    let path = |eq: [f64; 2], t: f64| -> std::result::Result<Vec<[f64; 2]>, Rejection> {
        let states = sample_path(&params.with_r_eq(eq), [x.p[0], x.p[1], 0.0, 0.0], t, n, tol)
            .map_err(|_| Rejection::Singular)?;
        Ok(states.iter().map(|y| [y[0], y[1]]).collect())
    };
    let (a, b) = (path(eq_a, x.t_half_a)?, path(eq_b, x.t_half_b)?);
    if min_divisor(params, &a).min(min_divisor(params, &b)) < opts.refine.q_margin {
        return Err(Rejection::Singular);
    }
    if !loop_is_simple(&a, &b) {
        return Err(Rejection::SelfIntersecting);
    }
    let mut gait = NnmGait {
        eq_a,
        eq_b,
        p: x.p,
        p_prime: x.p_prime,
        t_half_a: x.t_half_a,
        t_half_b: x.t_half_b,
        energy_a: x.energy_a,
        energy_b: x.energy_b,
        switch: switch_energy(x.p_prime, eq_a, eq_b, params),
        period: x.t_half_a + x.t_half_b,
        displacement: 0.0,
        rotation: 0.0,
        arc_length: 0.0,
    };
    let traj = run_switching_gait(&gait.plan(), 1, params, &opts.switching).map_err(|_| Rejection::Simulation)?;
    let (d, rot) = net_motion(&traj);
    gait.period = traj.duration();
    gait.displacement = d;
    gait.rotation = rot;
    gait.arc_length = traj.last().arc;
    Ok(gait)
}

/// Why a generator crossing did not become a gait.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rejection {
    /// Re-shooting did not converge to a shared turning point nearby.
    Refinement,
    /// A mode path comes too close to the singular shapes.
    Singular,
    /// The two mode paths cross each other.
    SelfIntersecting,
    /// The switching simulation missed a turning point.
    Simulation,
    /// Same turning points as an earlier gait of the same pair.
    Duplicate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub refinement: usize,
    pub singular: usize,
    pub self_intersecting: usize,
    pub simulation: usize,
    pub duplicate: usize,
}

impl RejectionCounts {
    fn add(&mut self, r: Rejection) {
        match r {
            Rejection::Refinement => self.refinement += 1,
            Rejection::Singular => self.singular += 1,
            Rejection::SelfIntersecting => self.self_intersecting += 1,
            Rejection::Simulation => self.simulation += 1,
            Rejection::Duplicate => self.duplicate += 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub trace: TraceOptions,
    /// Generators are traced up to this energy [J].
    pub e_max: f64,
    /// Energy of the first generator sample [J].
    pub e_min: f64,
    /// Shooting settings for refining intersections.
    pub refine: ShootOptions,
    /// Largest accepted distance between a polyline crossing and its refinement [rad].
    pub max_shift: f64,
    /// Gaits of one equilibrium pair closer than this are the same [rad].
    pub dedup_tol: f64,
    pub switching: SwitchOptions,
    /// Samples per mode path in the self-crossing check.
    pub path_samples: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            trace: TraceOptions::default(),
            e_max: 200.0,
            e_min: 1e-3,
            refine: ShootOptions {
                newton: NewtonOptions {
                    max_iter: 12,
                    tol: 1e-10,
                    ..NewtonOptions::default()
                },
                ..ShootOptions::default()
            },
            max_shift: 0.1,
            dedup_tol: 1e-4,
            switching: SwitchOptions::default(),
            path_samples: 200,
        }
    }
}

/// Result of scanning equilibria on the diagonal for switching gaits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitScan {
    pub generators: Vec<Generator>,
    /// Number of raw polyline crossings.
    pub crossings: usize,
    pub gaits: Vec<NnmGait>,
    pub rejected: RejectionCounts,
}

/// `n` equilibrium offsets evenly spaced over `range`, both ends included.
pub fn diagonal_samples(n: usize, range: (f64, f64)) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![range.0],
        _ => (0..n)
            .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Traces `G_perp` from `sample_count` equilibria `(c, -c)` with `c` in
/// `range`, intersects all pairs and keeps the crossings that form gaits.
pub fn enumerate_nnm_gaits(
    sample_count: usize,
    range: (f64, f64),
    params: &ModelParams,
    opts: &ScanOptions,
) -> GaitScan {
    let cs = diagonal_samples(sample_count, range);
    let generators: Vec<Generator> = cs
        .par_iter()
        .map(|&c| trace_generator(&params.with_diagonal_eq(c), Branch::Perp, (opts.e_min, opts.e_max), &opts.trace))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..generators.len())
        .flat_map(|i| (i + 1..generators.len()).map(move |j| (i, j)))
        .collect();
    let found: Vec<Vec<std::result::Result<NnmGait, Rejection>>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (ga, gb) = (&generators[i], &generators[j]);
            let mut kept: Vec<std::result::Result<NnmGait, Rejection>> = Vec::new();
            for c in generator_crossings(ga, gb) {
                let x = refine_intersection(params, (ga.r_eq, ga.branch), (gb.r_eq, gb.branch), &c, &opts.refine)
                    .ok()
                    .filter(|x| (x.p[0] - c.p[0]).hypot(x.p[1] - c.p[1]) <= opts.max_shift);
                let Some(x) = x else {
                    kept.push(Err(Rejection::Refinement));
                    continue;
                };
                let dup = kept.iter().flatten().any(|g| {
                    (g.p[0] - x.p[0]).hypot(g.p[1] - x.p[1]) < opts.dedup_tol
                });
                kept.push(if dup {
                    Err(Rejection::Duplicate)
                } else {
                    assemble_gait(params, ga.r_eq, gb.r_eq, &x, opts)
                });
            }
            kept
        })
        .collect();
    let mut scan = GaitScan {
        generators,
        crossings: 0,
        gaits: Vec::new(),
        rejected: RejectionCounts::default(),
    };
    for r in found.into_iter().flatten() {
        scan.crossings += 1;
        match r {
            Ok(g) => scan.gaits.push(g),
            Err(e) => scan.rejected.add(e),
        }
    }
    scan
}
