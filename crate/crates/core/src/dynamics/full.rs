//! Full five-coordinate description `q = (x, y, θ, α1, α2)` of the snake.
//!
//! The reduced bias forces are obtained from these quantities by null-space
//! projection, and the constrained reference model in
//! [`constrained`](super::constrained) integrates them directly.

use nalgebra::{Matrix3x2, SMatrix, SVector, Vector2};

use super::kinematics::{body_placements, local_connection, BodyPlacement};
use crate::error::Result;
use crate::params::ModelParams;
use crate::scalar::Scalar;

pub type Coords<S> = SVector<S, 5>;

/// World-frame Jacobians of one body: position rows `jv` (2×5) and heading
/// row `jw` (1×5), plus the body heading in the world.
#[derive(Clone, Copy, Debug)]
pub struct WorldJacobian<S: Scalar> {
    pub jv: SMatrix<S, 2, 5>,
    pub jw: SMatrix<S, 1, 5>,
    pub heading: S,
}

fn world_jacobian<S: Scalar>(theta: S, b: &BodyPlacement<S>) -> WorldJacobian<S> {
    let (s, c) = theta.sin_cos();
    let rot = |v: &Vector2<S>| Vector2::new(c * v[0] - s * v[1], s * v[0] + c * v[1]);
    let z = S::zero();
    let one = S::one();
    let dtheta = rot(&Vector2::new(-b.center[1], b.center[0]));
    let d1 = rot(&b.dcenter[0]);
    let d2 = rot(&b.dcenter[1]);
    WorldJacobian {
        jv: SMatrix::<S, 2, 5>::new(one, z, dtheta[0], d1[0], d2[0], z, one, dtheta[1], d1[1], d2[1]),
        jw: SMatrix::<S, 1, 5>::new(z, z, one, b.dheading[0], b.dheading[1]),
        heading: theta + b.heading,
    }
}

pub fn world_jacobians<S: Scalar>(p: &ModelParams<S>, q: &Coords<S>) -> [WorldJacobian<S>; 3] {
    let r = Vector2::new(q[3], q[4]);
    body_placements(p, &r).map(|b| world_jacobian(q[2], &b))
}

/// Kinetic energy `T(q, q̇)` summed over the three bodies.
pub fn kinetic_energy<S: Scalar>(p: &ModelParams<S>, q: &Coords<S>, dq: &Coords<S>) -> S {
    let half = S::lit(0.5);
    world_jacobians(p, q)
        .iter()
        .enumerate()
        .fold(S::zero(), |acc, (b, j)| {
            let v = j.jv * dq;
            let w = (j.jw * dq)[0];
            acc + half * (p.mass[b] * v.dot(&v) + p.inertia[b] * w * w)
        })
}

/// Generalized momentum `∂T/∂q̇ = M(q) q̇`.
pub fn momentum<S: Scalar>(p: &ModelParams<S>, q: &Coords<S>, dq: &Coords<S>) -> Coords<S> {
    world_jacobians(p, q)
        .iter()
        .enumerate()
        .fold(Coords::zeros(), |acc, (b, j)| {
            let v = j.jv * dq;
            let w = (j.jw * dq)[0];
            acc + j.jv.transpose() * v * p.mass[b] + j.jw.transpose() * (w * p.inertia[b])
        })
}

/// Full mass matrix `M(q)`.
pub fn mass_matrix<S: Scalar>(p: &ModelParams<S>, q: &Coords<S>) -> SMatrix<S, 5, 5> {
    world_jacobians(p, q)
        .iter()
        .enumerate()
        .fold(SMatrix::zeros(), |acc, (b, j)| {
            acc + j.jv.transpose() * j.jv * p.mass[b] + j.jw.transpose() * j.jw * p.inertia[b]
        })
}

/// Lateral no-slip constraint rows `W(q)`, one per body (`W q̇ = 0`).
pub fn constraint_matrix<S: Scalar>(p: &ModelParams<S>, q: &Coords<S>) -> SMatrix<S, 3, 5> {
    let mut w = SMatrix::<S, 3, 5>::zeros();
    for (b, j) in world_jacobians(p, q).iter().enumerate() {
        let (s, c) = j.heading.sin_cos();
        let normal = SMatrix::<S, 1, 2>::new(-s, c);
        w.set_row(b, &(normal * j.jv));
    }
    w
}

/// Null-space basis `B(q)` with `q̇ = B(q) ṙ` on the constraint distribution.
pub fn constrained_basis<S: Scalar>(p: &ModelParams<S>, q: &Coords<S>) -> Result<SMatrix<S, 5, 2>> {
    let a: Matrix3x2<S> = local_connection(p, &Vector2::new(q[3], q[4]))?;
    let (s, c) = q[2].sin_cos();
    let mut b = SMatrix::<S, 5, 2>::zeros();
    for j in 0..2 {
        let (xi_x, xi_y, xi_t) = (-a[(0, j)], -a[(1, j)], -a[(2, j)]);
        b[(0, j)] = c * xi_x - s * xi_y;
        b[(1, j)] = s * xi_x + c * xi_y;
        b[(2, j)] = xi_t;
    }
    b[(3, 0)] = S::one();
    b[(4, 1)] = S::one();
    Ok(b)
}

/// Embeds real coordinates into dual numbers along a direction.
pub(crate) fn seeded<S: Scalar>(x: &Coords<S>, dir: &Coords<S>) -> Coords<crate::Dual<S>> {
    Coords::from_fn(|i, _| crate::Dual::new(x[i], dir[i]))
}

pub(crate) fn constant<S: Scalar>(x: &Coords<S>) -> Coords<crate::Dual<S>> {
    x.map(crate::Dual::constant)
}

pub(crate) fn tangent<S: Scalar>(x: &Coords<crate::Dual<S>>) -> Coords<S> {
    x.map(|d| d.eps)
}
