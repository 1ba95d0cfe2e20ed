//! Time integration of the reduced dynamics with pose reconstruction,
//! turning-point detection and equilibrium switching.

use std::io::Write;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{connection_divisor, forward_dynamics, local_connection, total_energy, Pose, ShapeState};
use crate::error::{Error, Result};
use crate::integrate::{Dopri5, OdeSystem, Step, Tolerances};
use crate::params::ModelParams;
use crate::scalar::Scalar;

/// Unactuated shape dynamics on `(r, ṙ)`.
#[derive(Clone, Copy, Debug)]
pub struct ShapeFlow<S: Scalar> {
    pub params: ModelParams<S>,
}

impl<S: Scalar> ShapeFlow<S> {
    pub fn new(params: ModelParams<S>) -> Self {
        Self { params }
    }
}

impl<S: Scalar> OdeSystem<S, 4> for ShapeFlow<S> {
    fn rhs(&self, _t: S, y: &[S; 4]) -> Result<[S; 4]> {
        let state = ShapeState::from_array(y);
        let a = forward_dynamics(&self.params, &state, &Vector2::zeros())?;
        Ok([y[2], y[3], a[0], a[1]])
    }
}

/// Joint torque as a function of time and shape state.
pub type TorqueFn<'a> = dyn Fn(f64, &ShapeState) -> Vector2<f64> + Sync + 'a;

/// No actuation.
pub fn no_torque(_t: f64, _s: &ShapeState) -> Vector2<f64> {
    Vector2::zeros()
}

/// Shape dynamics co-integrated with the central body pose and its path
/// length. State layout `(α1, α2, α̇1, α̇2, x, y, θ, s)`.
pub(crate) struct PoseFlow<'a> {
    pub params: ModelParams,
    pub torque: &'a TorqueFn<'a>,
}

impl OdeSystem<f64, 8> for PoseFlow<'_> {
    fn rhs(&self, t: f64, y: &[f64; 8]) -> Result<[f64; 8]> {
        let state = ShapeState::from_array(&y[..4]);
        let tau = (self.torque)(t, &state);
        let ddr = forward_dynamics(&self.params, &state, &tau)?;
        let a = local_connection(&self.params, &state.r)?;
        let xi = -(a * state.dr);
        let (s, c) = y[6].sin_cos();
        Ok([
            y[2],
            y[3],
            ddr[0],
            ddr[1],
            c * xi[0] - s * xi[1],
            s * xi[0] + c * xi[1],
            xi[2],
            xi[0].hypot(xi[1]),
        ])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub r: [f64; 2],
    pub dr: [f64; 2],
    pub pose: Pose,
    pub energy: f64,
    pub tau: [f64; 2],
    /// Path length of the central body so far [m].
    pub arc: f64,
}

impl Sample {
    pub fn state(&self) -> ShapeState {
        ShapeState::new(self.r, self.dr)
    }
}

/// Instantaneous replacement of the spring equilibria.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub t: f64,
    pub r_at_switch: [f64; 2],
    pub r_eq_before: [f64; 2],
    pub r_eq_after: [f64; 2],
    /// Potential change of each spring [J].
    pub delta_v: [f64; 2],
}

impl SwitchEvent {
    pub fn new(t: f64, r: [f64; 2], before: [f64; 2], after: [f64; 2], k: [f64; 2]) -> Self {
        let delta_v = std::array::from_fn(|i| {
            0.5 * k[i] * ((r[i] - after[i]).powi(2) - (r[i] - before[i]).powi(2))
        });
        Self {
            t,
            r_at_switch: r,
            r_eq_before: before,
            r_eq_after: after,
            delta_v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub tol: Tolerances,
    /// Uniform output spacing; `None` records every accepted step.
    pub sample_dt: Option<f64>,
    /// Integration stops when `|Q|` drops below this value.
    pub q_stop: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            sample_dt: None,
            q_stop: 1e-6,
        }
    }
}

/// Simulated motion with its metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub params: ModelParams,
    pub tol: Tolerances,
    pub events: Vec<SwitchEvent>,
    /// Set when the run stopped early near a singular shape.
    pub truncated_at: Option<f64>,
    #[serde(skip)]
    steps: Vec<Step<f64, 8>>,
}

impl Trajectory {
    fn empty(params: ModelParams, tol: Tolerances) -> Self {
        Self {
            samples: Vec::new(),
            params,
            tol,
            events: Vec::new(),
            truncated_at: None,
            steps: Vec::new(),
        }
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has samples")
    }

    pub fn duration(&self) -> f64 {
        self.last().t - self.first().t
    }

    /// Errors when the run was cut short.
    pub fn check(&self) -> Result<&Self> {
        match self.truncated_at {
            Some(t) => Err(Error::SingularityApproached { t }),
            None => Ok(self),
        }
    }

    /// Accepted integrator steps with their dense output.
    pub fn steps(&self) -> &[Step<f64, 8>] {
        &self.steps
    }

    /// Continuous state `(r, ṙ, x, y, θ, s)` at time `t` within the run.
    pub fn state_at(&self, t: f64) -> Option<[f64; 8]> {
        let i = self.steps.partition_point(|s| s.t1 < t);
        let s = self.steps.get(i)?;
        (t >= s.t0).then(|| s.interpolate(t))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,r1,r2,dr1,dr2,x,y,theta,E,tau1,tau2")?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.t, s.r[0], s.r[1], s.dr[0], s.dr[1], s.pose.x, s.pose.y, s.pose.theta, s.energy, s.tau[0], s.tau[1]
            )?;
        }
        Ok(())
    }

    /// Sidecar with parameters, tolerances and events.
    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "params": self.params,
            "tolerances": self.tol,
            "events": self.events,
            "truncated_at": self.truncated_at,
            "samples": self.samples.len(),
        })
    }
}

fn pack(state: &ShapeState, pose: &Pose, arc: f64) -> [f64; 8] {
    [state.r[0], state.r[1], state.dr[0], state.dr[1], pose.x, pose.y, pose.theta, arc]
}

fn sample_of(p: &ModelParams, torque: &TorqueFn, t: f64, y: &[f64; 8]) -> Result<Sample> {
    let state = ShapeState::from_array(&y[..4]);
    let tau = torque(t, &state);
    Ok(Sample {
        t,
        r: [y[0], y[1]],
        dr: [y[2], y[3]],
        pose: Pose::new(y[4], y[5], y[6]),
        energy: total_energy(p, &state)?,
        tau: [tau[0], tau[1]],
        arc: y[7],
    })
}

/// Speed minimum inside a step: `ṙ·r̈` changes sign from negative to
/// nonnegative. Returns the refined time and state.
pub(crate) fn speed_minimum<const N: usize>(step: &Step<f64, N>) -> Option<(f64, [f64; N])> {
    let p0 = step.y0[2] * step.f0[2] + step.y0[3] * step.f0[3];
    let p1 = step.y1[2] * step.f1[2] + step.y1[3] * step.f1[3];
    if !(p0 < 0.0 && p1 >= 0.0) {
        return None;
    }
    // near a turning point ṙ(t) ≈ r̈ (t − t*), so its projection on r̈ has a
    // simple root
    let u = if step.y1[2].hypot(step.y1[3]) < step.y0[2].hypot(step.y0[3]) {
        [step.f1[2], step.f1[3]]
    } else {
        [step.f0[2], step.f0[3]]
    };
    let g = |t: f64| {
        let y = step.interpolate(t);
        y[2] * u[0] + y[3] * u[1]
    };
    let (mut a, mut b) = (step.t0, step.t1);
    let (mut ga, mut gb) = (g(a), g(b));
    if ga.signum() == gb.signum() && ga != 0.0 && gb != 0.0 {
        // projection root not bracketed, fall back to a golden search on |ṙ|²
        let speed = |t: f64| {
            let y = step.interpolate(t);
            y[2] * y[2] + y[3] * y[3]
        };
        let t = golden_min(speed, a, b);
        return Some((t, step.interpolate(t)));
    }
    // Illinois false position
    let mut side = 0;
    for _ in 0..100 {
        let t = (a * gb - b * ga) / (gb - ga);
        let gt = g(t);
        if gt == 0.0 || (b - a).abs() < 1e-15 * (1.0 + t.abs()) {
            a = t;
            b = t;
            break;
        }
        if gt.signum() == gb.signum() {
            b = t;
            gb = gt;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            a = t;
            ga = gt;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        }
    }
    let t = 0.5 * (a + b);
    Some((t, step.interpolate(t)))
}

pub(crate) fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Stop rule for a segment: the first speed minimum after `floor` with
/// `‖ṙ‖ < tol_v`.
#[derive(Clone, Copy, Debug)]
struct TurningStop {
    floor: f64,
    tol_v: f64,
}

enum SegmentEnd {
    Reached,
    Turning(f64, [f64; 8]),
    Truncated(f64),
}

fn run_segment(
    p: &ModelParams,
    torque: &TorqueFn,
    t0: f64,
    y0: [f64; 8],
    t_end: f64,
    opts: &SimOptions,
    stop: Option<TurningStop>,
    out: &mut Trajectory,
) -> Result<SegmentEnd> {
    let sys = PoseFlow { params: *p, torque };
    let mut stepper = Dopri5::new(&sys, t0, y0, opts.tol)?;
    if out.samples.last().map_or(true, |s| s.t < t0) {
        out.samples.push(sample_of(p, torque, t0, &y0)?);
    }
    // output grid t0 + k dt, snapped onto t_end at the last point
    let grid = |k: usize, dt: f64| {
        let t = t0 + k as f64 * dt;
        if (t_end - t).abs() <= 1e-9 * dt { t_end } else { t }
    };
    let mut next_k = 1;
    while !stepper.done(t_end) {
        let step = match stepper.step(t_end) {
            Ok(s) => s,
            Err(Error::SingularShape { .. }) | Err(Error::IllConditioned { .. }) => {
                return Ok(SegmentEnd::Truncated(stepper.t));
            }
            Err(e) => return Err(e),
        };
        let turning = stop.and_then(|rule| {
            speed_minimum(&step)
                .filter(|(t, y)| *t > t0 + rule.floor && y[2].hypot(y[3]) < rule.tol_v)
        });
        let upto = turning.map_or(step.t1, |(t, _)| t);
        if let Some(dt) = opts.sample_dt {
            while grid(next_k, dt) <= upto {
                let tn = grid(next_k, dt);
                out.samples.push(sample_of(p, torque, tn, &step.interpolate(tn))?);
                next_k += 1;
            }
        }
        let q0 = connection_divisor(p, &Vector2::new(step.y0[0], step.y0[1]));
        let q1 = connection_divisor(p, &Vector2::new(step.y1[0], step.y1[1]));
        let near_singular = q1.abs() < opts.q_stop || q0.signum() != q1.signum();
        out.steps.push(step.clone());
        if let Some((t, y)) = turning {
            if opts.sample_dt.is_none() || out.samples.last().map_or(true, |s| s.t < t) {
                out.samples.push(sample_of(p, torque, t, &y)?);
            }
            return Ok(SegmentEnd::Turning(t, y));
        }
        if opts.sample_dt.is_none() || step.t1 == t_end {
            if out.samples.last().map_or(true, |s| s.t < step.t1) {
                out.samples.push(sample_of(p, torque, step.t1, &step.y1)?);
            }
        }
        if near_singular {
            return Ok(SegmentEnd::Truncated(step.t1));
        }
    }
    Ok(SegmentEnd::Reached)
}

/// Integrates the shape dynamics together with the pose over `t_span`.
///
/// A run that approaches a singular shape is returned truncated, with
/// [`Trajectory::truncated_at`] set.
pub fn integrate(
    initial: &ShapeState,
    pose: &Pose,
    torque: &TorqueFn,
    params: &ModelParams,
    t_span: (f64, f64),
    opts: &SimOptions,
) -> Result<Trajectory> {
    let mut traj = Trajectory::empty(*params, opts.tol);
    local_connection(params, &initial.r)?;
    let y0 = pack(initial, pose, 0.0);
    if let SegmentEnd::Truncated(t) = run_segment(params, torque, t_span.0, y0, t_span.1, opts, None, &mut traj)? {
        traj.truncated_at = Some(t);
    }
    Ok(traj)
}

/// Unactuated run from rest or motion, starting at the origin pose.
pub fn integrate_free(initial: &ShapeState, params: &ModelParams, duration: f64, opts: &SimOptions) -> Result<Trajectory> {
    integrate(initial, &Pose::default(), &no_torque, params, (0.0, duration), opts)
}

/// Turning point found on a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurningPoint {
    pub t: f64,
    pub r: [f64; 2],
    pub speed: f64,
}

/// Speed minima of the trajectory with `‖ṙ‖ < tol_v`, located by root
/// refinement on the dense output.
pub fn detect_turning_point(traj: &Trajectory, tol_v: f64) -> Vec<TurningPoint> {
    traj.steps
        .iter()
        .filter_map(speed_minimum)
        .map(|(t, y)| TurningPoint {
            t,
            r: [y[0], y[1]],
            speed: y[2].hypot(y[3]),
        })
        .filter(|tp| tp.speed < tol_v)
        .collect()
}

/// The two equilibria and shared turning point of a switching gait.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchPlan {
    pub start: [f64; 2],
    pub eq_a: [f64; 2],
    pub eq_b: [f64; 2],
    /// Expected travel times on each mode [s].
    pub t_half_a: f64,
    pub t_half_b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchOptions {
    pub sim: SimOptions,
    /// Speed below which a speed minimum counts as a turning point [rad/s].
    pub tol_v: f64,
    /// Allowed distance between the reached and the expected turning point [rad].
    pub closeness: f64,
}

impl Default for SwitchOptions {
    fn default() -> Self {
        Self {
            sim: SimOptions::default(),
            tol_v: 1e-6,
            closeness: 1e-4,
        }
    }
}

/// Runs a two-mode switching gait for `n_periods` periods.
///
/// Starts at rest at `plan.start` on the first mode, switches to the second
/// equilibrium at the far turning point and back at the return.
pub fn run_switching_gait(
    plan: &SwitchPlan,
    n_periods: usize,
    params: &ModelParams,
    opts: &SwitchOptions,
) -> Result<Trajectory> {
    let mut traj = Trajectory::empty(params.with_r_eq(plan.eq_a), opts.sim.tol);
    let mut y = pack(&ShapeState::at_rest(plan.start), &Pose::default(), 0.0);
    let mut t = 0.0;
    let mirror = [-plan.start[1], -plan.start[0]];
    let legs = [(plan.eq_a, plan.t_half_a, mirror), (plan.eq_b, plan.t_half_b, plan.start)];
    for _ in 0..n_periods {
        for (leg, &(eq, t_half, target)) in legs.iter().enumerate() {
            let p = params.with_r_eq(eq);
            let stop = TurningStop {
                floor: 0.5 * t_half,
                tol_v: opts.tol_v,
            };
            match run_segment(&p, &no_torque, t, y, t + 1.5 * t_half, &opts.sim, Some(stop), &mut traj)? {
                SegmentEnd::Turning(tt, yy) => {
                    let miss = (yy[0] - target[0]).hypot(yy[1] - target[1]);
                    if miss > opts.closeness {
                        return Err(Error::TurningPointMissed { t: tt });
                    }
                    t = tt;
                    y = yy;
                }
                SegmentEnd::Reached => return Err(Error::TurningPointMissed { t: t + 1.5 * t_half }),
                SegmentEnd::Truncated(tt) => return Err(Error::SingularityApproached { t: tt }),
            }
            let next = legs[1 - leg].0;
            traj.events.push(SwitchEvent::new(t, [y[0], y[1]], eq, next, params.stiffness));
            // re-evaluate the switch sample's energy on the new equilibrium
            if let Some(last) = traj.samples.last_mut() {
                last.energy = total_energy(&params.with_r_eq(next), &last.state())?;
            }
        }
    }
    Ok(traj)
}

/// Net world displacement and heading change between the first and last
/// samples.
pub fn net_motion(traj: &Trajectory) -> (f64, f64) {
    let (a, b) = (traj.first().pose, traj.last().pose);
    ((b.x - a.x).hypot(b.y - a.y), b.theta - a.theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rest_at_equilibrium_stays_put() {
        let p = ModelParams::default();
        let traj = integrate_free(&ShapeState::at_rest(p.r_eq), &p, 2.0, &SimOptions::default()).unwrap();
        for s in &traj.samples {
            assert_eq!(s.r, p.r_eq);
            assert_eq!(s.dr, [0.0, 0.0]);
            assert_eq!(s.pose, Pose::default());
        }
    }

    #[test]
    fn samples_are_increasing_in_time() {
        let p = ModelParams::default();
        let s0 = ShapeState::at_rest([0.7, -0.5]);
        for dt in [None, Some(0.05)] {
            let opts = SimOptions {
                sample_dt: dt,
                ..Default::default()
            };
            let traj = integrate_free(&s0, &p, 3.0, &opts).unwrap();
            assert!(traj.samples.windows(2).all(|w| w[1].t > w[0].t));
            assert_relative_eq!(traj.last().t, 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn energy_field_is_consistent_with_state() {
        let p = ModelParams::default();
        let traj = integrate_free(&ShapeState::new([0.7, -0.5], [0.3, 0.1]), &p, 2.0, &SimOptions::default()).unwrap();
        for s in &traj.samples {
            assert_relative_eq!(s.energy, total_energy(&p, &s.state()).unwrap(), max_relative = 1e-9);
        }
    }

    #[test]
    fn switch_event_potential_difference() {
        let e = SwitchEvent::new(0.0, [0.2, 0.0], [0.0, 0.0], [0.6, 0.0], [10.0, 10.0]);
        assert_relative_eq!(e.delta_v[0], 0.6, epsilon = 1e-14);
        assert_eq!(e.delta_v[1], 0.0);
    }

    #[test]
    fn csv_has_header_and_one_row_per_sample() {
        let p = ModelParams::default();
        let traj = integrate_free(&ShapeState::at_rest([0.7, -0.6]), &p, 0.5, &SimOptions::default()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,r1,r2,dr1,dr2,x,y,theta,E,tau1,tau2\n"));
        assert_eq!(text.lines().count(), traj.samples.len() + 1);
    }

    #[test]
    fn run_toward_singularity_is_truncated() {
        let p = ModelParams::default().rigid();
        let s = ShapeState::new([0.3, 0.1], [-1.0, 1.0]);
        let traj = integrate_free(&s, &p, 5.0, &SimOptions::default()).unwrap();
        assert!(traj.truncated_at.is_some());
        assert!(matches!(traj.check(), Err(Error::SingularityApproached { .. })));
    }
}
