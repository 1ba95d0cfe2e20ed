//! Reduced shape dynamics `M̃(r) r̈ + h̃(r, ṙ) + ∂V/∂r = τ_r`.

use nalgebra::{Matrix2, Matrix3, Vector2};

use super::full::{self, Coords};
use super::kinematics::{body_jacobians, ShapeState};
use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::scalar::Scalar;

/// Reduced inertia `M̃ = Σ_b J_bᵀ diag(m_b, m_b, I_b) J_b`.
pub fn reduced_mass_matrix<S: Scalar>(p: &ModelParams<S>, r: &Vector2<S>) -> Result<Matrix2<S>> {
    let jac = body_jacobians(p, r)?;
    let mut m = Matrix2::zeros();
    for (b, j) in jac.iter().enumerate() {
        let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(p.mass[b], p.mass[b], p.inertia[b]));
        m += j.transpose() * d * j;
    }
    // exact symmetry
    let off = (m[(0, 1)] + m[(1, 0)]) * S::lit(0.5);
    m[(0, 1)] = off;
    m[(1, 0)] = off;
    Ok(m)
}

/// Velocity-dependent reduced forces `h̃ = C̃ ṙ + Ñ`.
///
/// Projects the full-coordinate Lagrangian terms onto the constraint
/// distribution: `h̃ = Bᵀ (d/dt(M q̇)|_{r̈=0} − ∂T/∂q)` with `q̇ = B ṙ`. The
/// time derivative and the gradient are forward-mode directional derivatives,
/// so the result is exact to rounding.
pub fn bias_forces<S: Scalar>(p: &ModelParams<S>, state: &ShapeState<S>) -> Result<Vector2<S>> {
    let z = S::zero();
    // the model is invariant under planar motions, evaluate at the origin
    let q = Coords::from([z, z, z, state.r[0], state.r[1]]);
    let basis = full::constrained_basis(p, &q)?;
    let dq = basis * state.dr;

    let pd = p.map(Dual::constant);
    let drd = state.dr.map(Dual::constant);

    // d/dε of M(q+εq̇) B(q+εq̇) ṙ
    let qd = full::seeded(&q, &dq);
    let dqd = full::constrained_basis(&pd, &qd)? * drd;
    let dmom = full::tangent(&full::momentum(&pd, &qd, &dqd));

    let dq_const = full::constant(&dq);
    let mut grad = Vector2::zeros();
    for j in 0..2 {
        let dir: Coords<S> = basis.column(j).into_owned();
        let qd = full::seeded(&q, &dir);
        grad[j] = full::kinetic_energy(&pd, &qd, &dq_const).eps;
    }
    Ok(basis.transpose() * dmom - grad)
}

/// Spring torque `∂V/∂r = K (r − r_eq)`.
pub fn spring_torque<S: Scalar>(p: &ModelParams<S>, r: &Vector2<S>) -> Vector2<S> {
    Vector2::new(
        p.stiffness[0] * (r[0] - p.r_eq[0]),
        p.stiffness[1] * (r[1] - p.r_eq[1]),
    )
}

/// Spring potential `V(r) = ½ (r − r_eq)ᵀ K (r − r_eq)`.
pub fn potential<S: Scalar>(p: &ModelParams<S>, r: &Vector2<S>) -> S {
    let d0 = r[0] - p.r_eq[0];
    let d1 = r[1] - p.r_eq[1];
    S::lit(0.5) * (p.stiffness[0] * d0 * d0 + p.stiffness[1] * d1 * d1)
}

pub fn kinetic_energy<S: Scalar>(p: &ModelParams<S>, state: &ShapeState<S>) -> Result<S> {
    let m = reduced_mass_matrix(p, &state.r)?;
    Ok(S::lit(0.5) * state.dr.dot(&(m * state.dr)))
}

/// Total energy `½ ṙᵀ M̃ ṙ + V(r)`.
pub fn total_energy<S: Scalar>(p: &ModelParams<S>, state: &ShapeState<S>) -> Result<S> {
    Ok(kinetic_energy(p, state)? + potential(p, &state.r))
}

/// Condition number of a symmetric positive definite 2×2 matrix.
pub(crate) fn spd_condition<S: Scalar>(m: &Matrix2<S>) -> S {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = (tr * tr * S::lit(0.25) - det).max(S::zero()).sqrt();
    let hi = tr * S::lit(0.5) + disc;
    let lo = tr * S::lit(0.5) - disc;
    if lo > S::zero() {
        hi / lo
    } else {
        S::infinity()
    }
}

fn solve2<S: Scalar>(m: &Matrix2<S>, b: &Vector2<S>) -> Vector2<S> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Vector2::new(
        (m[(1, 1)] * b[0] - m[(0, 1)] * b[1]) / det,
        (m[(0, 0)] * b[1] - m[(1, 0)] * b[0]) / det,
    )
}

/// Shape acceleration `r̈ = M̃⁻¹ (τ_r − h̃ − ∂V/∂r)`.
pub fn forward_dynamics<S: Scalar>(p: &ModelParams<S>, state: &ShapeState<S>, tau: &Vector2<S>) -> Result<Vector2<S>> {
    let m = reduced_mass_matrix(p, &state.r)?;
    let cond = spd_condition(&m);
    if !(cond <= p.cond_limit) {
        return Err(Error::IllConditioned { cond: cond.value() });
    }
    let rhs = tau - bias_forces(p, state)? - spring_torque(p, &state.r);
    Ok(solve2(&m, &rhs))
}

/// Joint torque required for a given shape motion.
pub fn inverse_dynamics<S: Scalar>(p: &ModelParams<S>, state: &ShapeState<S>, ddr: &Vector2<S>) -> Result<Vector2<S>> {
    let m = reduced_mass_matrix(p, &state.r)?;
    Ok(m * ddr + bias_forces(p, state)? + spring_torque(p, &state.r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::full;
    use crate::dynamics::kinematics::{body_jacobians, body_placements, local_connection};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    fn random_shape(rng: &mut ChaCha8Rng) -> Vector2<f64> {
        loop {
            let r: Vector2<f64> = Vector2::new(rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5));
            if (r[0] - r[1]).abs() > 0.2 {
                return r;
            }
        }
    }

    #[test]
    fn spring_torque_and_potential() {
        let p = params().with_r_eq([0.0, 0.0]);
        assert_eq!(spring_torque(&p, &Vector2::new(0.0, 0.0)), Vector2::zeros());
        let t = spring_torque(&p, &Vector2::new(0.1, -0.2));
        assert_relative_eq!(t, Vector2::new(1.0, -2.0), epsilon = 1e-14);
        assert_relative_eq!(potential(&p, &Vector2::new(0.1, 0.0)), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn energy_at_rest() {
        let p = params();
        let eq = ShapeState::at_rest(p.r_eq);
        assert_eq!(total_energy(&p, &eq).unwrap(), 0.0);
        let s = ShapeState::at_rest([p.r_eq[0] + 0.1, p.r_eq[1]]);
        assert_relative_eq!(total_energy(&p, &s).unwrap(), 0.05, epsilon = 1e-14);
    }

    #[test]
    fn mass_matrix_is_symmetric_positive_definite() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m = reduced_mass_matrix(&p, &random_shape(&mut rng)).unwrap();
            assert_eq!(m[(0, 1)], m[(1, 0)]);
            assert!(m[(0, 0)] > 0.0 && m.determinant() > 0.0);
        }
    }

    #[test]
    fn mass_matrix_equals_projected_full_mass_matrix() {
        let p = ModelParams { h: 0.8, r: 1.2, ..params() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let r = random_shape(&mut rng);
            let q = Coords::from([0.3, -1.0, 0.7, r[0], r[1]]);
            let b = full::constrained_basis(&p, &q).unwrap();
            let projected = b.transpose() * full::mass_matrix(&p, &q) * b;
            assert_relative_eq!(projected, reduced_mass_matrix(&p, &r).unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn kinetic_energy_matches_sum_over_bodies() {
        let p = params();
        let s = ShapeState::new([0.5, -0.5], [0.2, 0.2]);
        let a = local_connection(&p, &s.r).unwrap();
        let xi = -(a * s.dr);
        let by_body: f64 = body_placements(&p, &s.r)
            .iter()
            .enumerate()
            .map(|(b, pl)| {
                let v = crate::dynamics::kinematics::body_frame_velocity(pl, &xi, &s.dr);
                0.5 * p.mass[b] * (v[0] * v[0] + v[1] * v[1]) + 0.5 * p.inertia[b] * v[2] * v[2]
            })
            .sum();
        assert_relative_eq!(kinetic_energy(&p, &s).unwrap(), by_body, max_relative = 1e-12);
    }

    #[test]
    fn mass_matrix_scales_with_mass_and_length_squared() {
        let p = params();
        let big = ModelParams { h: 2.0, r: 2.0, inertia: [4.0 / 3.0; 3], ..p };
        let r = Vector2::new(0.7, -0.2);
        let m1 = reduced_mass_matrix(&p, &r).unwrap();
        let m2 = reduced_mass_matrix(&big, &r).unwrap();
        assert_relative_eq!(m2, m1 * 4.0, max_relative = 1e-13);
    }

    #[test]
    fn bias_forces_vanish_at_zero_velocity_and_are_even_in_velocity() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let r = random_shape(&mut rng);
            let dr = Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let zero = bias_forces(&p, &ShapeState { r, dr: Vector2::zeros() }).unwrap();
            assert_eq!(zero, Vector2::zeros());
            let fwd = bias_forces(&p, &ShapeState { r, dr }).unwrap();
            let back = bias_forces(&p, &ShapeState { r, dr: -dr }).unwrap();
            assert_relative_eq!(fwd, back, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn bias_forces_do_no_work_beyond_inertia_change() {
        // ṙᵀ h̃ = ½ ṙᵀ (dM̃/dt) ṙ, with dM̃/dt from central differences
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..30 {
            let r = random_shape(&mut rng);
            let dr = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let h = 1e-6;
            let mp = reduced_mass_matrix(&p, &(r + dr * h)).unwrap();
            let mm = reduced_mass_matrix(&p, &(r - dr * h)).unwrap();
            let mdot = (mp - mm) / (2.0 * h);
            let lhs = dr.dot(&bias_forces(&p, &ShapeState { r, dr }).unwrap());
            let rhs = 0.5 * dr.dot(&(mdot * dr));
            assert!((lhs - rhs).abs() < 1e-7 * (1.0 + rhs.abs()), "{lhs} {rhs}");
        }
    }

    #[test]
    fn dual_mass_matrix_derivative_matches_finite_differences() {
        let p = params();
        let r = Vector2::new(0.9, -0.3);
        let pd = p.map(Dual::constant);
        for j in 0..2 {
            let rd = Vector2::from_fn(|i, _| Dual::new(r[i], if i == j { 1.0 } else { 0.0 }));
            let md = reduced_mass_matrix(&pd, &rd).unwrap().map(|d| d.eps);
            let mut e = Vector2::zeros();
            e[j] = 1e-6;
            let fd = (reduced_mass_matrix(&p, &(r + e)).unwrap() - reduced_mass_matrix(&p, &(r - e)).unwrap()) / 2e-6;
            assert_relative_eq!(md, fd, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn inverse_and_forward_dynamics_round_trip() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let r = random_shape(&mut rng);
            let s = ShapeState { r, dr: Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) };
            let ddr = Vector2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let tau = inverse_dynamics(&p, &s, &ddr).unwrap();
            let back = forward_dynamics(&p, &s, &tau).unwrap();
            assert_relative_eq!(back, ddr, epsilon = 1e-10);
        }
    }

    #[test]
    fn equilibrium_is_at_rest() {
        let p = params();
        let s = ShapeState::at_rest(p.r_eq);
        assert_eq!(forward_dynamics(&p, &s, &Vector2::zeros()).unwrap(), Vector2::zeros());
        assert_eq!(inverse_dynamics(&p, &s, &Vector2::zeros()).unwrap(), Vector2::zeros());
    }

    #[test]
    fn ill_conditioning_is_reported() {
        let p = ModelParams { cond_limit: 1.5, ..params() };
        let err = forward_dynamics(&p, &ShapeState::at_rest([0.5, -0.5]), &Vector2::zeros()).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }));
    }

    #[test]
    fn body_jacobians_agree_with_full_coordinates() {
        // J_b ṙ rotated into the world equals Jv_b B ṙ
        let p = ModelParams { h: 1.1, r: 0.9, ..params() };
        let r = Vector2::new(0.4, -1.1);
        let q = Coords::from([0.0, 0.0, 0.3, r[0], r[1]]);
        let b = full::constrained_basis(&p, &q).unwrap();
        let jw = full::world_jacobians(&p, &q);
        let jb = body_jacobians(&p, &r).unwrap();
        let dr = Vector2::new(0.3, 0.8);
        for k in 0..3 {
            let world = jw[k].jv * (b * dr);
            let body = jb[k] * dr;
            let (s, c) = jw[k].heading.sin_cos();
            assert_relative_eq!(world[0], c * body[0] - s * body[1], epsilon = 1e-13);
            assert_relative_eq!(world[1], s * body[0] + c * body[1], epsilon = 1e-13);
            assert_relative_eq!((jw[k].jw * (b * dr))[0], body[2], epsilon = 1e-13);
        }
    }
}
