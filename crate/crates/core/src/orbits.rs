//! Non-brake periodic orbits: a multiple-shooting boundary value solver and
//! energy continuation of orbit families.

use nalgebra::{DMatrix, DVector, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::Dual;
use crate::dynamics::{connection_divisor, potential, reduced_mass_matrix, total_energy, ShapeState};
use crate::efficiency::BaselineEllipse;
use crate::error::{Error, Result};
use crate::integrate::{Dopri5, OdeSystem, Tolerances};
use crate::params::ModelParams;
use crate::shooting::{flow, flow_tangents, gauss_newton, NewtonOptions, Seed};
use crate::sim::{integrate_free, net_motion, speed_minimum, ShapeFlow, SimOptions};

/// Periodic orbit of the unactuated snake whose joint speed never vanishes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    /// Initial state `(α1, α2, α̇1, α̇2)`.
    pub initial: [f64; 4],
    pub period: f64,
    pub energy: f64,
    pub r_eq: [f64; 2],
    /// Smallest `‖ṙ‖` over one period [rad/s].
    pub min_speed: f64,
    /// Periodicity residual of a single shot over the whole period.
    pub residual: f64,
    /// Net displacement per period [m].
    pub displacement: f64,
    /// Net heading change per period [rad].
    pub rotation: f64,
    /// Path length of the central body per period [m].
    pub arc_length: f64,
    /// Smallest `|Q|` along the path.
    pub min_divisor: f64,
    /// States at uniform times over one period, both ends included.
    pub path: Vec<[f64; 4]>,
}

impl PeriodicOrbit {
    pub fn v_avg(&self) -> f64 {
        self.displacement / self.period
    }

    pub fn state(&self) -> ShapeState {
        ShapeState::from_array(&self.initial)
    }

    /// Shape path only.
    pub fn shape_path(&self) -> Vec<[f64; 2]> {
        self.path.iter().map(|y| [y[0], y[1]]).collect()
    }
}

/// Initial guess for the boundary value solver: states at equally spaced
/// times over one period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NboGuess {
    pub nodes: Vec<[f64; 4]>,
    pub period: f64,
}

impl NboGuess {
    /// Guess from the elliptical baseline loop, starting on the diagonal with
    /// velocity normal to it.
    pub fn ellipse(e: &BaselineEllipse, segments: usize) -> Self {
        let nodes = (0..segments)
            .map(|k| e.kinematics(e.period * k as f64 / segments as f64).0.to_array())
            .collect();
        Self {
            nodes,
            period: e.period,
        }
    }

    /// Scales the velocity profile and the period.
    pub fn scaled(&self, velocity: f64, period: f64) -> Self {
        Self {
            nodes: self
                .nodes
                .iter()
                .map(|y| [y[0], y[1], velocity * y[2], velocity * y[3]])
                .collect(),
            period: self.period * period,
        }
    }
}

/// Whether the spring equilibria are held fixed or solved for along the
/// diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EqMode {
    Fixed,
    Solved,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NboOptions {
    /// Number of shooting segments.
    pub segments: usize,
    pub tol: Tolerances,
    pub newton: NewtonOptions,
    /// Orbits slower than this somewhere are brake orbits [rad/s].
    pub min_speed: f64,
    /// Number of path intervals recorded for the returned orbit.
    pub path_samples: usize,
    /// Orbits coming closer than this to `Q = 0` are rejected.
    pub q_margin: f64,
    pub eq_mode: EqMode,
}

impl Default for NboOptions {
    fn default() -> Self {
        Self {
            segments: 8,
            tol: Tolerances::new(1e-12, 1e-14),
            newton: NewtonOptions {
                max_iter: 60,
                tol: 1e-12,
                ..NewtonOptions::default()
            },
            min_speed: 1e-3,
            path_samples: 400,
            q_margin: 1e-3,
            eq_mode: EqMode::Fixed,
        }
    }
}

/// Segment flow with its sensitivities: end state, `∂φ/∂x · seeds`, and the
/// state rate at the end.
fn segment(p: &ModelParams, x: &[f64; 4], dt: f64, tol: Tolerances, seeds: &[Seed]) -> Result<([f64; 4], Vec<[f64; 4]>, [f64; 4])> {
    let (end, tan) = flow_tangents(p, x, dt, tol, seeds)?;
    let f = ShapeFlow::new(*p).rhs(dt, &end)?;
    Ok((end, tan, f))
}

/// Assembles the multiple-shooting system for unknowns
/// `[head.., T, (c), x_1, .., x_{m-1}]`, where `head` parameterizes the
/// initial state through `x0(head)` with constant Jacobian `dx0`.
struct Shooting<'a> {
    params: &'a ModelParams,
    m: usize,
    tol: Tolerances,
    solve_eq: bool,
    head: usize,
    x0: &'a dyn Fn(&[f64]) -> [f64; 4],
    dx0: Vec<[f64; 4]>,
    /// Extra scalar residuals on the initial state with their gradients.
    extra: &'a dyn Fn(&[f64; 4], &ModelParams) -> Vec<(f64, [f64; 4])>,
}

impl Shooting<'_> {
    fn unknowns(&self) -> usize {
        self.head + 1 + usize::from(self.solve_eq) + 4 * (self.m - 1)
    }

    fn params_at(&self, z: &DVector<f64>) -> ModelParams {
        if self.solve_eq {
            let c = z[self.head + 1];
            self.params.with_r_eq([c, -c])
        } else {
            *self.params
        }
    }

    fn node(&self, z: &DVector<f64>, k: usize) -> [f64; 4] {
        if k == 0 {
            (self.x0)(&z.as_slice()[..self.head])
        } else {
            let o = self.head + 1 + usize::from(self.solve_eq) + 4 * (k - 1);
            [z[o], z[o + 1], z[o + 2], z[o + 3]]
        }
    }

    fn eval(&self, z: &DVector<f64>, jac: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let m = self.m;
        let t = z[self.head];
        if !(t > 0.0) {
            return Err(Error::Degenerate(format!("nonpositive period {t}")));
        }
        let dt = t / m as f64;
        let p = self.params_at(z);
        let x0 = self.node(z, 0);
        let extra = (self.extra)(&x0, &p);
        let rows = 4 * m + extra.len();
        let n = self.unknowns();
        let mut f = DVector::zeros(rows);
        let mut j = jac.then(|| DMatrix::zeros(rows, n));
        let col_t = self.head;
        let col_c = self.head + 1;
        let node_col = |k: usize| self.head + 1 + usize::from(self.solve_eq) + 4 * (k - 1);
        for k in 0..m {
            let xk = self.node(z, k);
            let mut seeds: Vec<Seed> = Vec::new();
            if jac {
                if k == 0 {
                    seeds.extend(self.dx0.iter().map(|d| Seed {
                        state: *d,
                        r_eq: [0.0; 2],
                    }));
                } else {
                    seeds.extend((0..4).map(Seed::state));
                }
                if self.solve_eq {
                    seeds.push(Seed::diagonal_eq());
                }
            }
            let (end, tan, fend) = segment(&p, &xk, dt, self.tol, &seeds)?;
            let next = if k + 1 == m { x0 } else { self.node(z, k + 1) };
            for i in 0..4 {
                f[4 * k + i] = next[i] - end[i];
            }
            if let Some(j) = j.as_mut() {
                let r0 = 4 * k;
                // dependence on this segment's start
                let (cols, ntan): (Vec<usize>, usize) = if k == 0 {
                    ((0..self.head).collect(), self.head)
                } else {
                    ((node_col(k)..node_col(k) + 4).collect(), 4)
                };
                for (s, &c) in cols.iter().enumerate().take(ntan) {
                    for i in 0..4 {
                        j[(r0 + i, c)] -= tan[s][i];
                    }
                }
                for i in 0..4 {
                    j[(r0 + i, col_t)] -= fend[i] / m as f64;
                }
                if self.solve_eq {
                    for i in 0..4 {
                        j[(r0 + i, col_c)] -= tan[ntan][i];
                    }
                }
                // dependence on the next node
                if k + 1 == m {
                    for (s, d) in self.dx0.iter().enumerate() {
                        for i in 0..4 {
                            j[(r0 + i, s)] += d[i];
                        }
                    }
                } else {
                    for i in 0..4 {
                        j[(r0 + i, node_col(k + 1) + i)] += 1.0;
                    }
                }
            }
        }
        for (e, (val, grad)) in extra.iter().enumerate() {
            let r = 4 * m + e;
            f[r] = *val;
            if let Some(j) = j.as_mut() {
                for (s, d) in self.dx0.iter().enumerate() {
                    j[(r, s)] = (0..4).map(|i| grad[i] * d[i]).sum();
                }
            }
        }
        Ok((f, j))
    }

    fn initial_unknowns(&self, head: &[f64], period: f64, c: f64, nodes: &[[f64; 4]]) -> DVector<f64> {
        let mut z = Vec::with_capacity(self.unknowns());
        z.extend_from_slice(head);
        z.push(period);
        if self.solve_eq {
            z.push(c);
        }
        for y in &nodes[1..self.m] {
            z.extend_from_slice(y);
        }
        DVector::from_vec(z)
    }
}

/// Resamples guess nodes to `m` equally spaced states by nearest index.
fn resample(nodes: &[[f64; 4]], m: usize) -> Vec<[f64; 4]> {
    (0..m).map(|k| nodes[k * nodes.len() / m]).collect()
}

/// Nodes along a single shot from `x0`.
fn shoot_nodes(p: &ModelParams, x0: &[f64; 4], period: f64, m: usize, tol: Tolerances) -> Result<Vec<[f64; 4]>> {
    let dt = period / m as f64;
    let mut out = vec![*x0];
    for _ in 1..m {
        let last = *out.last().expect("nonempty");
        out.push(flow(p, &last, dt, tol)?);
    }
    Ok(out)
}

/// Re-simulates a converged solution and measures it.
pub fn measure_orbit(initial: [f64; 4], period: f64, params: &ModelParams, opts: &NboOptions) -> Result<PeriodicOrbit> {
    let sim = SimOptions {
        tol: opts.tol,
        sample_dt: Some(period / opts.path_samples as f64),
        ..SimOptions::default()
    };
    let traj = integrate_free(&ShapeState::from_array(&initial), params, period, &sim)?;
    if let Some(t) = traj.truncated_at {
        return Err(Error::SingularityApproached { t });
    }
    let end = traj.state_at(period).expect("period covered");
    let residual = (0..4).map(|i| (end[i] - initial[i]).powi(2)).sum::<f64>().sqrt();
    let mut min_speed = initial[2].hypot(initial[3]);
    for step in traj.steps() {
        min_speed = min_speed.min(step.y1[2].hypot(step.y1[3]));
        if let Some((_, y)) = speed_minimum(step) {
            min_speed = min_speed.min(y[2].hypot(y[3]));
        }
    }
    let mut path: Vec<[f64; 4]> = (0..=opts.path_samples)
        .map(|i| {
            let t = (period * i as f64 / opts.path_samples as f64).min(period);
            let y = traj.state_at(t).expect("period covered");
            [y[0], y[1], y[2], y[3]]
        })
        .collect();
    path[0] = initial;
    let min_divisor = path
        .iter()
        .map(|y| connection_divisor(params, &Vector2::new(y[0], y[1])).abs())
        .fold(f64::INFINITY, f64::min);
    let (d, rot) = net_motion(&traj);
    let arc_length = end[7];
    Ok(PeriodicOrbit {
        initial,
        period,
        energy: total_energy(params, &ShapeState::from_array(&initial))?,
        r_eq: params.r_eq,
        min_speed,
        residual,
        displacement: d,
        rotation: rot,
        arc_length,
        min_divisor,
        path,
    })
}

fn accept(orbit: PeriodicOrbit, opts: &NboOptions) -> Result<PeriodicOrbit> {
    if orbit.min_speed <= opts.min_speed {
        return Err(Error::ConvergedToBrakeOrbit {
            min_speed: orbit.min_speed,
        });
    }
    if orbit.min_divisor < opts.q_margin {
        return Err(Error::SingularityApproached { t: 0.0 });
    }
    Ok(orbit)
}

/// Solves for a periodic orbit that starts on the diagonal moving normal to it.
///
/// Unknowns are the start offset `u` (state `(u, -u)`), the normal speed `w`
/// (rate `(w, w)`), the period and, with [`EqMode::Solved`], the equilibrium
/// offset `c` of `r_eq = (c, -c)`. Residuals are the periodicity conditions.
pub fn solve_nbo(guess: &NboGuess, params: &ModelParams, opts: &NboOptions) -> Result<PeriodicOrbit> {
    if (params.r_eq[0] + params.r_eq[1]).abs() > 1e-12 {
        return Err(Error::InvalidParams("spring equilibria must lie on the diagonal".into()));
    }
    let m = opts.segments.max(1);
    let nodes = resample(&guess.nodes, m);
    let g0 = nodes[0];
    let (u, w) = (0.5 * (g0[0] - g0[1]), 0.5 * (g0[2] + g0[3]));
    let x0 = |h: &[f64]| [h[0], -h[0], h[1], h[1]];
    let none = |_: &[f64; 4], _: &ModelParams| Vec::new();
    let sys = Shooting {
        params,
        m,
        tol: opts.tol,
        solve_eq: opts.eq_mode == EqMode::Solved,
        head: 2,
        x0: &x0,
        dx0: vec![[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]],
        extra: &none,
    };
    let mut nodes = nodes;
    nodes[0] = x0(&[u, w]);
    let z0 = sys.initial_unknowns(&[u, w], guess.period, params.r_eq[0], &nodes);
    let sol = gauss_newton(|z, j| sys.eval(z, j), z0, &opts.newton)?;
    let p = sys.params_at(&sol.z);
    let initial = x0(&sol.z.as_slice()[..2]);
    accept(measure_orbit(initial, sol.z[2], &p, opts)?, opts)
}

/// Total energy of a state and its gradient.
fn energy_gradient(p: &ModelParams, x: &[f64; 4]) -> (f64, [f64; 4]) {
    let pd = p.map(Dual::constant);
    let mut e = f64::NAN;
    let grad = std::array::from_fn(|i| {
        let y: [Dual<f64>; 4] = std::array::from_fn(|k| Dual::new(x[k], if k == i { 1.0 } else { 0.0 }));
        match total_energy(&pd, &ShapeState::from_array(&y)) {
            Ok(v) => {
                e = v.re;
                v.eps
            }
            Err(_) => f64::NAN,
        }
    });
    (e, grad)
}

/// Solves for the orbit of energy `energy` near `prev`, with the phase fixed
/// by `α1(0) = anchor`.
pub fn solve_nbo_at_energy(
    prev: &PeriodicOrbit,
    energy: f64,
    anchor: f64,
    params: &ModelParams,
    opts: &NboOptions,
) -> Result<PeriodicOrbit> {
    solve_from(prev.initial, prev.period, prev.r_eq, energy, anchor, params, opts)
}

fn solve_from(
    initial: [f64; 4],
    period: f64,
    r_eq: [f64; 2],
    energy: f64,
    anchor: f64,
    params: &ModelParams,
    opts: &NboOptions,
) -> Result<PeriodicOrbit> {
    let m = opts.segments.max(1);
    let p = params.with_r_eq(r_eq);
    let nodes = shoot_nodes(&p, &initial, period, m, opts.tol)?;
    let x0 = |h: &[f64]| [h[0], h[1], h[2], h[3]];
    let extra = move |x: &[f64; 4], p: &ModelParams| {
        let (e, grad) = energy_gradient(p, x);
        vec![(e - energy, grad), (x[0] - anchor, [1.0, 0.0, 0.0, 0.0])]
    };
    let sys = Shooting {
        params: &p,
        m,
        tol: opts.tol,
        solve_eq: false,
        head: 4,
        x0: &x0,
        dx0: vec![
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
        extra: &extra,
    };
    let z0 = sys.initial_unknowns(&initial, period, r_eq[0], &nodes);
    let sol = gauss_newton(|z, j| sys.eval(z, j), z0, &opts.newton)?;
    let initial = x0(&sol.z.as_slice()[..4]);
    accept(measure_orbit(initial, sol.z[4], &p, opts)?, opts)
}

/// Where a family ended at low energy because its orbits became brake orbits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collapse {
    pub energy: f64,
    pub min_speed: f64,
}

/// Orbits of one family in order of increasing energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitFamily {
    pub r_eq: [f64; 2],
    pub orbits: Vec<PeriodicOrbit>,
    /// Energy step used [J].
    pub de: f64,
    pub collapse: Option<Collapse>,
    /// Reasons the continuation stopped early, one per direction.
    pub truncated: Vec<String>,
}

/// Continues an orbit through energy levels `seed.energy ± n·de` within
/// `e_range`, seeding each solve with its neighbor.
///
/// A failed solve is retried with half the step twice before that direction
/// is abandoned.
pub fn continue_family(
    seed: &PeriodicOrbit,
    e_range: (f64, f64),
    de: f64,
    params: &ModelParams,
    opts: &NboOptions,
) -> OrbitFamily {
    let mut fam = OrbitFamily {
        r_eq: seed.r_eq,
        orbits: vec![seed.clone()],
        de,
        collapse: None,
        truncated: Vec::new(),
    };
    let newton = NewtonOptions {
        max_iter: opts.newton.max_iter.min(20),
        ..opts.newton
    };
    let step_opts = NboOptions { newton, ..*opts };
    for dir in [1.0, -1.0] {
        let mut branch: Vec<PeriodicOrbit> = Vec::new();
        let mut prev = seed.clone();
        let mut before: Option<PeriodicOrbit> = None;
        let mut step = de;
        loop {
            let target = prev.energy + dir * step;
            if target < e_range.0 - 1e-12 || target > e_range.1 + 1e-12 {
                break;
            }
            // secant prediction of the initial state and period
            let (initial, period) = match &before {
                Some(b) => {
                    let w = (target - prev.energy) / (prev.energy - b.energy);
                    (
                        std::array::from_fn(|i| prev.initial[i] + w * (prev.initial[i] - b.initial[i])),
                        prev.period + w * (prev.period - b.period),
                    )
                }
                None => (prev.initial, prev.period),
            };
            match solve_from(initial, period, prev.r_eq, target, initial[0], params, &step_opts) {
                Ok(o) => {
                    before = Some(std::mem::replace(&mut prev, o.clone()));
                    branch.push(o);
                    step = de;
                }
                Err(Error::ConvergedToBrakeOrbit { min_speed }) if dir < 0.0 => {
                    fam.collapse = Some(Collapse {
                        energy: target,
                        min_speed,
                    });
                    break;
                }
                Err(e) => {
                    if step > de / 3.9 {
                        step *= 0.5;
                        continue;
                    }
                    fam.truncated.push(format!("stopped at E = {target}: {e}"));
                    break;
                }
            }
        }
        if dir > 0.0 {
            fam.orbits.extend(branch);
        } else {
            branch.reverse();
            branch.extend(fam.orbits);
            fam.orbits = branch;
        }
    }
    fam
}

/// Settings for [`diagonal_seeds`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedScan {
    /// Number of start offsets `u` sampled on `(-π, π)`.
    pub samples: usize,
    /// Returns to the diagonal examined per start.
    pub returns: usize,
    /// Longest half period considered [s].
    pub horizon: f64,
    /// Candidates slower than this before their return are skipped [rad/s].
    pub min_speed: f64,
}

impl Default for SeedScan {
    fn default() -> Self {
        Self {
            samples: 400,
            returns: 2,
            horizon: 6.0,
            min_speed: 0.05,
        }
    }
}

/// Returns of the flow from `y0` to the diagonal `α1 + α2 = 0`: time,
/// `α̇1 - α̇2` there, and the smallest speed before it.
fn diagonal_returns(p: &ModelParams, y0: [f64; 4], horizon: f64, n: usize) -> Vec<(f64, f64, f64)> {
    let sys = ShapeFlow::new(*p);
    let Ok(mut st) = Dopri5::new(&sys, 0.0, y0, Tolerances::new(1e-9, 1e-11)) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut minv = f64::INFINITY;
    while !st.done(horizon) && out.len() < n {
        let Ok(s) = st.step(horizon) else { break };
        minv = minv.min(s.y1[2].hypot(s.y1[3]));
        let (a, b) = (s.y0[0] + s.y0[1], s.y1[0] + s.y1[1]);
        if s.t0 > 1e-9 && a * b < 0.0 {
            let (mut lo, mut hi) = (s.t0, s.t1);
            for _ in 0..50 {
                let m = 0.5 * (lo + hi);
                let y = s.interpolate(m);
                if (y[0] + y[1]) * a > 0.0 {
                    lo = m
                } else {
                    hi = m
                }
            }
            let y = s.interpolate(lo);
            out.push((lo, y[2] - y[3], minv));
        }
    }
    out
}

/// Diagonal state `(u, -u, w, w)` of energy `energy` with `w > 0`.
pub fn diagonal_state(params: &ModelParams, energy: f64, u: f64) -> Option<[f64; 4]> {
    let r = Vector2::new(u, -u);
    let m = reduced_mass_matrix(params, &r).ok()?;
    let m11 = m.sum();
    let ke = energy - potential(params, &r);
    (ke > 0.0 && m11 > 0.0).then(|| [u, -u, (2.0 * ke / m11).sqrt(), (2.0 * ke / m11).sqrt()])
}

/// Guesses for symmetric orbits of energy `energy`.
///
/// A flow from `(u, -u, w, w)` that meets the diagonal again moving normal to
/// it retraces itself under the reflection `(α1, α2) → (-α2, -α1)` and closes
/// after twice that time. Roots of `α̇1 - α̇2` at the k-th return are
/// bracketed over `u` and each bracket yields one guess.
pub fn diagonal_seeds(params: &ModelParams, energy: f64, scan: &SeedScan, segments: usize) -> Vec<NboGuess> {
    let lim = std::f64::consts::PI - 0.05;
    let n = scan.samples.max(2);
    let us: Vec<f64> = (0..n).map(|i| -lim + 2.0 * lim * i as f64 / (n - 1) as f64).collect();
    let rets: Vec<Vec<(f64, f64, f64)>> = us
        .iter()
        .map(|&u| match diagonal_state(params, energy, u) {
            Some(y) => diagonal_returns(params, y, scan.horizon, scan.returns),
            None => Vec::new(),
        })
        .collect();
    let mut out = Vec::new();
    for k in 0..scan.returns {
        for i in 1..n {
            let (Some(a), Some(b)) = (rets[i - 1].get(k), rets[i].get(k)) else {
                continue;
            };
            if a.1 * b.1 > 0.0 || a.2.min(b.2) < scan.min_speed || (a.0 - b.0).abs() > 0.2 * a.0.max(b.0) {
                continue;
            }
            let w = a.1 / (a.1 - b.1);
            let u = us[i - 1] + w * (us[i] - us[i - 1]);
            let half = a.0 + w * (b.0 - a.0);
            let Some(y0) = diagonal_state(params, energy, u) else {
                continue;
            };
            if let Ok(nodes) = shoot_nodes(params, &y0, 2.0 * half, segments.max(1), Tolerances::new(1e-10, 1e-12)) {
                out.push(NboGuess {
                    nodes,
                    period: 2.0 * half,
                });
            }
        }
    }
    out
}

fn segment_distance(p: &[f64; 4], a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let ab: [f64; 4] = std::array::from_fn(|i| b[i] - a[i]);
    let ap: [f64; 4] = std::array::from_fn(|i| p[i] - a[i]);
    let len2: f64 = ab.iter().map(|x| x * x).sum();
    let s = if len2 > 0.0 {
        (ab.iter().zip(&ap).map(|(x, y)| x * y).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ap.iter().zip(&ab).map(|(y, x)| (y - s * x).powi(2)).sum::<f64>().sqrt()
}

/// How many times `other` traverses `base`: `Some(n)` when the start of
/// `other` lies within `tol` of the path of `base` and its period is `n`
/// base periods to within 1e-3.
pub fn cover_multiple(base: &PeriodicOrbit, other: &PeriodicOrbit, tol: f64) -> Option<usize> {
    if base.r_eq != other.r_eq || !(base.period > 0.0) {
        return None;
    }
    let n = (other.period / base.period).round();
    if n < 1.0 || (other.period - n * base.period).abs() > 1e-3 * other.period {
        return None;
    }
    let near = base
        .path
        .windows(2)
        .any(|w| segment_distance(&other.initial, &w[0], &w[1]) < tol);
    near.then_some(n as usize)
}

/// Number of times the orbit runs through its own path per period, up to 4.
pub fn traversals(orbit: &PeriodicOrbit, params: &ModelParams, opts: &NboOptions) -> usize {
    let p = params.with_r_eq(orbit.r_eq);
    let scale = orbit.initial.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    (2..=4)
        .rev()
        .find(|&n| {
            flow(&p, &orbit.initial, orbit.period / n as f64, opts.tol).is_ok_and(|y| {
                let d = (0..4).map(|i| (y[i] - orbit.initial[i]).powi(2)).sum::<f64>().sqrt();
                d < 1e-6 * scale
            })
        })
        .unwrap_or(1)
}

/// Solves every guess and keeps one copy of each distinct orbit, dropping
/// repeats, time reversals of kept orbits, and orbits that run through a
/// shorter orbit several times.
/// Failures are returned with their guess index.
pub fn solve_distinct(
    guesses: &[NboGuess],
    params: &ModelParams,
    opts: &NboOptions,
) -> (Vec<PeriodicOrbit>, Vec<(usize, Error)>) {
    let solved: Vec<Result<PeriodicOrbit>> = guesses.par_iter().map(|g| solve_nbo(g, params, opts)).collect();
    let mut ok: Vec<PeriodicOrbit> = Vec::new();
    let mut failed = Vec::new();
    for (i, r) in solved.into_iter().enumerate() {
        match r {
            Ok(o) => ok.push(o),
            Err(e) => failed.push((i, e)),
        }
    }
    ok.sort_by(|a, b| a.period.total_cmp(&b.period));
    let mut out: Vec<PeriodicOrbit> = Vec::new();
    for o in ok {
        if traversals(&o, params, opts) > 1 {
            continue;
        }
        let mut rev = o.clone();
        rev.initial[2] = -rev.initial[2];
        rev.initial[3] = -rev.initial[3];
        if !out.iter().any(|b| cover_multiple(b, &o, 1e-2).is_some() || cover_multiple(b, &rev, 1e-2).is_some()) {
            out.push(o);
        }
    }
    (out, failed)
}

/// Largest distance between the reflected shape path `S(r(t_D + τ))` and
/// `r(t_D - τ)` over one period, where `t_D` is the diagonal crossing with
/// the most nearly normal velocity. Zero for an orbit symmetric under
/// `S(α1, α2) = (-α2, -α1)`, and an upper bound on the Hausdorff distance
/// between the path and its reflection.
pub fn reflection_defect(orbit: &PeriodicOrbit, params: &ModelParams, tol: Tolerances, samples: usize) -> Result<f64> {
    let p = params.with_r_eq(orbit.r_eq);
    let t = orbit.period;
    let sim = SimOptions {
        tol,
        ..SimOptions::default()
    };
    let traj = integrate_free(&orbit.state(), &p, 2.0 * t, &sim)?;
    traj.check()?;
    let mut best: Option<(f64, f64)> = None;
    for s in traj.steps() {
        let (a, b) = (s.y0[0] + s.y0[1], s.y1[0] + s.y1[1]);
        if s.t1 < 0.5 * t || s.t0 >= 1.5 * t || a * b > 0.0 || a == b {
            continue;
        }
        let (mut lo, mut hi) = (s.t0, s.t1);
        for _ in 0..60 {
            let m = 0.5 * (lo + hi);
            let y = s.interpolate(m);
            if (y[0] + y[1]) * a > 0.0 {
                lo = m
            } else {
                hi = m
            }
        }
        let y = s.interpolate(lo);
        let skew = (y[2] - y[3]).abs();
        if (0.5 * t..1.5 * t).contains(&lo) && best.map_or(true, |(_, k)| skew < k) {
            best = Some((lo, skew));
        }
    }
    let (td, _) = best.ok_or_else(|| Error::Degenerate("orbit does not cross the diagonal".into()))?;
    let n = samples.max(2);
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        let tau = 0.5 * t * i as f64 / n as f64;
        let (Some(f), Some(b)) = (traj.state_at(td + tau), traj.state_at(td - tau)) else {
            return Err(Error::Degenerate("reflection window outside the run".into()));
        };
        worst = worst.max((-f[1] - b[0]).hypot(-f[0] - b[1]));
    }
    Ok(worst)
}
