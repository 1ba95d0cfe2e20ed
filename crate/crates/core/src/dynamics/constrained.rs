//! Reference model in all five coordinates with the three wheel constraints
//! enforced by Lagrange multipliers.
//!
//! Independent of the local connection: the constraint rows come straight from
//! each body's heading, so agreement with the reduced model checks the
//! connection, the null-space projection and the bias forces together.

use nalgebra::{Matrix3, Matrix3x2, SMatrix, SVector, Vector2};

use super::full::{self, Coords};
use super::kinematics::{Pose, ShapeState};
use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::integrate::{integrate, OdeSystem, Tolerances};
use crate::params::ModelParams;

/// Local connection recovered numerically from the constraint rows.
pub fn connection_from_constraints(p: &ModelParams, r: &Vector2<f64>) -> Result<Matrix3x2<f64>> {
    let q = Coords::from([0.0, 0.0, 0.0, r[0], r[1]]);
    let w = full::constraint_matrix(p, &q);
    let wg: Matrix3<f64> = w.fixed_view::<3, 3>(0, 0).into_owned();
    let wr: Matrix3x2<f64> = w.fixed_view::<3, 2>(0, 3).into_owned();
    let lu = wg.lu();
    let a = lu.solve(&wr).ok_or(Error::SingularShape { q: 0.0 })?;
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularShape { q: 0.0 });
    }
    Ok(a)
}

/// Constrained Lagrangian dynamics in `(q, q̇)`.
#[derive(Clone, Debug)]
pub struct ConstrainedModel {
    pub params: ModelParams,
    /// Velocity-level constraint stabilization gain.
    pub stabilization: f64,
}

impl ConstrainedModel {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            stabilization: 10.0,
        }
    }

    /// Accelerations and multipliers at `(q, q̇)` with unactuated joints.
    pub fn accelerations(&self, q: &Coords<f64>, dq: &Coords<f64>) -> Result<(Coords<f64>, [f64; 3])> {
        let p = &self.params;
        let pd = p.map(Dual::constant);
        let m = full::mass_matrix(p, q);

        // Ṁ q̇ − ∂T/∂q
        let qd = full::seeded(q, dq);
        let mdot_dq = full::tangent(&full::momentum(&pd, &qd, &full::constant(dq)));
        let dq_const = full::constant(dq);
        let grad = Coords::from_fn(|i, _| {
            let mut e = Coords::zeros();
            e[i] = 1.0;
            full::kinetic_energy(&pd, &full::seeded(q, &e), &dq_const).eps
        });
        let mut force = -(mdot_dq - grad);
        force[3] -= p.stiffness[0] * (q[3] - p.r_eq[0]);
        force[4] -= p.stiffness[1] * (q[4] - p.r_eq[1]);

        let w = full::constraint_matrix(p, q);
        let wdot_dq = full::constraint_matrix(&pd, &qd).map(|d| d.eps) * dq;
        let drift = -wdot_dq - w * dq * self.stabilization;

        let mut kkt = SMatrix::<f64, 8, 8>::zeros();
        kkt.fixed_view_mut::<5, 5>(0, 0).copy_from(&m);
        kkt.fixed_view_mut::<5, 3>(0, 5).copy_from(&(-w.transpose()));
        kkt.fixed_view_mut::<3, 5>(5, 0).copy_from(&w);
        let mut rhs = SVector::<f64, 8>::zeros();
        rhs.fixed_rows_mut::<5>(0).copy_from(&force);
        rhs.fixed_rows_mut::<3>(5).copy_from(&drift);
        let sol = kkt.lu().solve(&rhs).ok_or(Error::SingularShape { q: 0.0 })?;
        Ok((sol.fixed_rows::<5>(0).into_owned(), [sol[5], sol[6], sol[7]]))
    }

    /// Consistent initial velocities for a shape state and pose.
    pub fn initial_velocity(&self, pose: &Pose, state: &ShapeState) -> Result<(Coords<f64>, Coords<f64>)> {
        let q = Coords::from([pose.x, pose.y, pose.theta, state.r[0], state.r[1]]);
        let b = full::constrained_basis(&self.params, &q)?;
        Ok((q, b * state.dr))
    }

    /// Integrates the constrained model and returns the final `(q, q̇)`.
    pub fn simulate(&self, pose: &Pose, state: &ShapeState, duration: f64, tol: Tolerances) -> Result<(Coords<f64>, Coords<f64>)> {
        let (q, dq) = self.initial_velocity(pose, state)?;
        let mut y0 = [0.0; 10];
        y0[..5].copy_from_slice(q.as_slice());
        y0[5..].copy_from_slice(dq.as_slice());
        let y = integrate(self, 0.0, y0, duration, tol)?;
        Ok((Coords::from_fn(|i, _| y[i]), Coords::from_fn(|i, _| y[5 + i])))
    }

    /// Lateral velocity of every body, `W(q) q̇`.
    pub fn lateral_slip(&self, q: &Coords<f64>, dq: &Coords<f64>) -> [f64; 3] {
        let v = full::constraint_matrix(&self.params, q) * dq;
        [v[0], v[1], v[2]]
    }
}

impl OdeSystem<f64, 10> for ConstrainedModel {
    fn rhs(&self, _t: f64, y: &[f64; 10]) -> Result<[f64; 10]> {
        let q = Coords::from_fn(|i, _| y[i]);
        let dq = Coords::from_fn(|i, _| y[5 + i]);
        let (ddq, _) = self.accelerations(&q, &dq)?;
        let mut out = [0.0; 10];
        out[..5].copy_from_slice(dq.as_slice());
        out[5..].copy_from_slice(ddq.as_slice());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::kinematics::local_connection;
    use crate::dynamics::reduced::forward_dynamics;
    use approx::assert_relative_eq;

    #[test]
    fn constraint_null_space_reproduces_closed_form_connection() {
        for p in [ModelParams::default(), ModelParams { h: 1.4, r: 0.6, ..ModelParams::default() }] {
            for (a1, a2) in [(0.5, -0.5), (1.3, 0.2), (-0.7, 2.0)] {
                let r = Vector2::new(a1, a2);
                let derived = connection_from_constraints(&p, &r).unwrap();
                assert_relative_eq!(derived, local_connection(&p, &r).unwrap(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn constrained_accelerations_match_reduced_dynamics() {
        let p = ModelParams::default();
        let model = ConstrainedModel::new(p);
        let state = ShapeState::new([0.9, -0.4], [0.7, -1.1]);
        let (q, dq) = model.initial_velocity(&Pose::new(0.2, 0.1, 0.5), &state).unwrap();
        let (ddq, _) = model.accelerations(&q, &dq).unwrap();
        let ddr = forward_dynamics(&p, &state, &Vector2::zeros()).unwrap();
        assert_relative_eq!(ddq[3], ddr[0], epsilon = 1e-10);
        assert_relative_eq!(ddq[4], ddr[1], epsilon = 1e-10);
    }
}
