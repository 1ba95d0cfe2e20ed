//! Cost of transport of gaits, with and without friction.
//!
//! Losses are evaluated on the frictionless trajectory: compensation torques
//! cancel friction and damping exactly, so the motion is unchanged and only
//! the required energy grows.

use std::io::Write;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{body_jacobians, forward_dynamics, inverse_dynamics, local_connection, ShapeState};
use crate::error::{Error, Result};
use crate::integrate::{integrate, Tolerances};
use crate::params::ModelParams;
use crate::modal::NnmGait;
use crate::orbits::PeriodicOrbit;
use crate::sim::{integrate_free, run_switching_gait, SimOptions, SwitchOptions, Trajectory};

/// Rolling resistance on every body and viscous joint damping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrictionParams {
    /// Constant force against each body's longitudinal motion [N].
    pub rolling_resistance: f64,
    /// Viscous joint damping [N·m·s/rad].
    pub joint_damping: f64,
    /// Speed scale of the `tanh` regularization of the resistance sign [m/s].
    pub smoothing: f64,
}

impl Default for FrictionParams {
    fn default() -> Self {
        Self {
            rolling_resistance: 0.03,
            joint_damping: 0.023,
            smoothing: 1e-6,
        }
    }
}

impl FrictionParams {
    pub fn none() -> Self {
        Self {
            rolling_resistance: 0.0,
            joint_damping: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rolling_resistance >= 0.0 && self.joint_damping >= 0.0 && self.smoothing > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("friction parameters must be nonnegative: {self:?}")))
        }
    }

    fn sign(&self, v: f64) -> f64 {
        (v / self.smoothing).tanh()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossModel {
    Conservative,
    Friction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaitKind {
    Baseline,
    Nnm,
    Nbo,
}

impl std::fmt::Display for GaitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GaitKind::Baseline => "baseline",
            GaitKind::Nnm => "nnm",
            GaitKind::Nbo => "nbo",
        })
    }
}

impl std::fmt::Display for LossModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossModel::Conservative => "conservative",
            LossModel::Friction => "friction",
        })
    }
}

/// Energy and transport figures of one gait period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitEvaluation {
    pub gait_id: String,
    pub kind: GaitKind,
    pub loss_model: LossModel,
    /// Required energy per period [J].
    pub e_req: f64,
    pub d: f64,
    pub period: f64,
    pub v_avg: f64,
    pub cot: f64,
    pub arc_length: f64,
}

impl GaitEvaluation {
    pub fn new(
        gait_id: impl Into<String>,
        kind: GaitKind,
        loss_model: LossModel,
        e_req: f64,
        d: f64,
        period: f64,
        arc_length: f64,
        params: &ModelParams,
    ) -> Result<Self> {
        Ok(Self {
            gait_id: gait_id.into(),
            kind,
            loss_model,
            e_req,
            d,
            period,
            v_avg: d / period,
            cot: cot(e_req, d, params)?,
            arc_length,
        })
    }
}

/// Mechanical cost of transport `E / (d m g)` with the total mass.
pub fn cot(e_req: f64, d: f64, params: &ModelParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::ZeroDisplacement { d });
    }
    Ok(e_req / (d * params.total_mass() * params.g))
}

/// Spring energy paid at one equilibrium switch and per gait period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchCost {
    /// Potential change of each spring at the switch [J].
    pub delta_v: [f64; 2],
    /// Energy required per period: two switches of equal cost [J].
    pub per_period: f64,
}

/// Cost of replacing the spring equilibria `before` by `after` at shape `r`.
pub fn switch_energy(r: [f64; 2], before: [f64; 2], after: [f64; 2], params: &ModelParams) -> SwitchCost {
    let k = params.stiffness;
    let delta_v: [f64; 2] =
        std::array::from_fn(|i| 0.5 * k[i] * ((r[i] - after[i]).powi(2) - (r[i] - before[i]).powi(2)));
    SwitchCost {
        delta_v,
        per_period: 2.0 * (delta_v[0].abs() + delta_v[1].abs()),
    }
}

/// Trapezoidal absolute joint work `∫ Σ |τ_i ṙ_i| dt` over recorded samples.
pub fn baseline_energy(traj: &Trajectory) -> f64 {
    let power = |s: &crate::sim::Sample| (s.tau[0] * s.dr[0]).abs() + (s.tau[1] * s.dr[1]).abs();
    traj.samples
        .windows(2)
        .map(|w| 0.5 * (w[1].t - w[0].t) * (power(&w[0]) + power(&w[1])))
        .sum()
}

/// Generalized forces of rolling resistance and joint damping, acting against
/// the motion. Their negative is the compensation torque.
pub fn friction_joint_torques(state: &ShapeState, fp: &FrictionParams, params: &ModelParams) -> Result<Vector2<f64>> {
    let jac = body_jacobians(params, &state.r)?;
    let mut tau = -state.dr * fp.joint_damping;
    for j in &jac {
        let v_long = (j.row(0) * state.dr)[0];
        tau += j.row(0).transpose() * (-fp.rolling_resistance * fp.sign(v_long));
    }
    Ok(tau)
}

/// Power drawn by friction and damping, `Σ_b f |v_b| + c ‖ṙ‖²`.
pub fn dissipated_power(state: &ShapeState, fp: &FrictionParams, params: &ModelParams) -> Result<f64> {
    let jac = body_jacobians(params, &state.r)?;
    let rolling: f64 = jac
        .iter()
        .map(|j| {
            let v = (j.row(0) * state.dr)[0];
            fp.rolling_resistance * v * fp.sign(v)
        })
        .sum();
    Ok(rolling + fp.joint_damping * state.dr.norm_squared())
}

/// A prescribed or simulated shape motion with its actuation torque.
pub trait ShapeMotion {
    /// Shape state and the joint torque producing the motion at time `t`.
    fn at(&self, t: f64) -> Result<(ShapeState, Vector2<f64>)>;
}

/// Elliptical shape loop centered on the diagonal, driven by joint torques on
/// the rigid snake.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineEllipse {
    pub center: [f64; 2],
    /// Semi-axis along the diagonal [rad].
    pub along: f64,
    /// Semi-axis normal to the diagonal [rad].
    pub normal: f64,
    pub period: f64,
}

impl Default for BaselineEllipse {
    fn default() -> Self {
        Self {
            center: [1.2, -1.2],
            along: 1.2,
            normal: 1.0,
            period: 10.0,
        }
    }
}

impl BaselineEllipse {
    /// Shape, rate and acceleration at time `t`, traversed at constant phase rate.
    pub fn kinematics(&self, t: f64) -> (ShapeState, Vector2<f64>) {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (ed, en) = (Vector2::new(s, -s), Vector2::new(s, s));
        let w = std::f64::consts::TAU / self.period;
        let (sn, cs) = (w * t).sin_cos();
        let c = Vector2::from(self.center);
        let r = c + ed * (self.along * cs) + en * (self.normal * sn);
        let dr = (ed * (-self.along * sn) + en * (self.normal * cs)) * w;
        let ddr = (ed * (-self.along * cs) + en * (-self.normal * sn)) * (w * w);
        (ShapeState { r, dr }, ddr)
    }

    pub fn with_period(&self, period: f64) -> Self {
        Self { period, ..*self }
    }
}

/// The baseline gait on given model parameters; the springs are ignored.
pub struct BaselineMotion<'a> {
    pub ellipse: BaselineEllipse,
    pub params: &'a ModelParams,
}

impl ShapeMotion for BaselineMotion<'_> {
    fn at(&self, t: f64) -> Result<(ShapeState, Vector2<f64>)> {
        let (state, ddr) = self.ellipse.kinematics(t);
        let tau = inverse_dynamics(&self.params.rigid(), &state, &ddr)?;
        Ok((state, tau))
    }
}

/// Dense output of an unswitched simulated trajectory.
pub struct TrajectoryMotion<'a> {
    pub traj: &'a Trajectory,
}

impl ShapeMotion for TrajectoryMotion<'_> {
    fn at(&self, t: f64) -> Result<(ShapeState, Vector2<f64>)> {
        let y = self
            .traj
            .state_at(t)
            .ok_or_else(|| Error::Degenerate(format!("time {t} outside the trajectory")))?;
        let state = ShapeState::from_array(&y[..4]);
        let p = &self.traj.params;
        // recorded torques are reproduced by inverse dynamics of the flow
        let ddr = forward_dynamics(p, &state, &Vector2::zeros())?;
        let tau = inverse_dynamics(p, &state, &ddr)?;
        Ok((state, tau))
    }
}

/// Per-period figures of a motion: world motion and the required energies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionCost {
    pub d: f64,
    pub rotation: f64,
    pub arc_length: f64,
    /// `∫ Σ |τ_i ṙ_i| dt` [J].
    pub e_conservative: f64,
    /// `∫ Σ |(τ_i + τ_comp,i) ṙ_i| dt` with the compensation torques [J].
    pub e_friction: f64,
    /// Energy dissipated by friction and damping [J].
    pub dissipated: f64,
}

/// Integrates pose, path length and absolute joint work of a motion over
/// `[0, period]`, with losses evaluated post hoc.
pub fn motion_cost(
    motion: &impl ShapeMotion,
    period: f64,
    fp: &FrictionParams,
    params: &ModelParams,
    tol: Tolerances,
) -> Result<MotionCost> {
    let sys = |t: f64, y: &[f64; 7]| -> Result<[f64; 7]> {
        let (state, tau) = motion.at(t)?;
        let xi = -(local_connection(params, &state.r)? * state.dr);
        let (s, c) = y[2].sin_cos();
        let comp = -friction_joint_torques(&state, fp, params)?;
        let abs_power = |tau: &Vector2<f64>| (tau[0] * state.dr[0]).abs() + (tau[1] * state.dr[1]).abs();
        Ok([
            c * xi[0] - s * xi[1],
            s * xi[0] + c * xi[1],
            xi[2],
            xi[0].hypot(xi[1]),
            abs_power(&tau),
            abs_power(&(tau + comp)),
            dissipated_power(&state, fp, params)?,
        ])
    };
    let y = integrate(&sys, 0.0, [0.0; 7], period, tol)?;
    Ok(MotionCost {
        d: y[0].hypot(y[1]),
        rotation: y[2],
        arc_length: y[3],
        e_conservative: y[4],
        e_friction: y[5],
        dissipated: y[6],
    })
}

/// Evaluates one period of a frictionless gait under a loss model.
pub fn evaluate_with_friction(
    gait_id: &str,
    kind: GaitKind,
    motion: &impl ShapeMotion,
    period: f64,
    fp: &FrictionParams,
    params: &ModelParams,
    tol: Tolerances,
) -> Result<GaitEvaluation> {
    let m = motion_cost(motion, period, fp, params, tol)?;
    GaitEvaluation::new(gait_id, kind, LossModel::Friction, m.e_friction, m.d, period, m.arc_length, params)
}

/// Conservative figures of a gait from its switch cost, or friction figures
/// from one simulated period plus the switch cost.
pub fn evaluate_nnm(
    gait_id: &str,
    gait: &NnmGait,
    loss: LossModel,
    fp: &FrictionParams,
    params: &ModelParams,
    opts: &SwitchOptions,
) -> Result<GaitEvaluation> {
    let per = gait.switch.per_period;
    match loss {
        LossModel::Conservative => GaitEvaluation::new(
            gait_id,
            GaitKind::Nnm,
            loss,
            per,
            gait.displacement,
            gait.period,
            gait.arc_length,
            params,
        ),
        LossModel::Friction => {
            let traj = run_switching_gait(&gait.plan(), 1, params, opts)?;
            let m = motion_cost(&TrajectoryMotion { traj: &traj }, traj.duration(), fp, params, opts.sim.tol)?;
            GaitEvaluation::new(gait_id, GaitKind::Nnm, loss, per + m.e_friction, m.d, traj.duration(), m.arc_length, params)
        }
    }
}

/// Figures of an unactuated periodic orbit: zero energy without losses.
pub fn evaluate_nbo(
    gait_id: &str,
    orbit: &PeriodicOrbit,
    loss: LossModel,
    fp: &FrictionParams,
    params: &ModelParams,
    tol: Tolerances,
) -> Result<GaitEvaluation> {
    let p = params.with_r_eq(orbit.r_eq);
    match loss {
        LossModel::Conservative => GaitEvaluation::new(
            gait_id,
            GaitKind::Nbo,
            loss,
            0.0,
            orbit.displacement,
            orbit.period,
            orbit.arc_length,
            &p,
        ),
        LossModel::Friction => {
            let sim = SimOptions {
                tol,
                ..SimOptions::default()
            };
            let traj = integrate_free(&orbit.state(), &p, orbit.period, &sim)?;
            traj.check()?;
            evaluate_with_friction(gait_id, GaitKind::Nbo, &TrajectoryMotion { traj: &traj }, orbit.period, fp, &p, tol)
        }
    }
}

/// Figures of the rigid baseline loop.
pub fn evaluate_baseline(
    gait_id: &str,
    ellipse: &BaselineEllipse,
    loss: LossModel,
    fp: &FrictionParams,
    params: &ModelParams,
    tol: Tolerances,
) -> Result<GaitEvaluation> {
    let motion = BaselineMotion {
        ellipse: *ellipse,
        params,
    };
    let m = motion_cost(&motion, ellipse.period, fp, params, tol)?;
    let e = match loss {
        LossModel::Conservative => m.e_conservative,
        LossModel::Friction => m.e_friction,
    };
    GaitEvaluation::new(gait_id, GaitKind::Baseline, loss, e, m.d, ellipse.period, m.arc_length, params)
}

pub const CSV_HEADER: &str = "gait_id,type,loss_model,v_avg,T,d,arc_length,E_req,CoT";

/// Writes evaluations as CSV with a header row.
pub fn write_csv<W: Write>(rows: &[GaitEvaluation], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for e in rows {
        writeln!(
            w,
            "{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            e.gait_id, e.kind, e.loss_model, e.v_avg, e.period, e.d, e.arc_length, e.e_req, e.cot
        )?;
    }
    Ok(())
}
