//! Wheel-constrained kinematics: body placement, local connection and body
//! Jacobians.

use nalgebra::{Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::scalar::Scalar;

/// Shape angles and rates `(r, ṙ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeState<S: Scalar = f64> {
    pub r: Vector2<S>,
    pub dr: Vector2<S>,
}

impl<S: Scalar> ShapeState<S> {
    pub fn new(r: [S; 2], dr: [S; 2]) -> Self {
        Self {
            r: Vector2::new(r[0], r[1]),
            dr: Vector2::new(dr[0], dr[1]),
        }
    }

    pub fn at_rest(r: [S; 2]) -> Self {
        Self::new(r, [S::zero(); 2])
    }

    pub fn to_array(&self) -> [S; 4] {
        [self.r[0], self.r[1], self.dr[0], self.dr[1]]
    }

    pub fn from_array(y: &[S]) -> Self {
        Self::new([y[0], y[1]], [y[2], y[3]])
    }
}

/// Planar pose of the central body.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose<S = f64> {
    pub x: S,
    pub y: S,
    pub theta: S,
}

impl<S: Scalar> Pose<S> {
    pub fn new(x: S, y: S, theta: S) -> Self {
        Self { x, y, theta }
    }
}

/// Velocity of a body expressed in its own frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BodyVelocity<S = f64> {
    pub xi_x: S,
    pub xi_y: S,
    pub xi_theta: S,
}

impl<S: Scalar> BodyVelocity<S> {
    pub fn from_vector(v: &Vector3<S>) -> Self {
        Self {
            xi_x: v[0],
            xi_y: v[1],
            xi_theta: v[2],
        }
    }
}

/// Placement of one body relative to the central frame, with its shape
/// derivatives.
#[derive(Clone, Copy, Debug)]
pub struct BodyPlacement<S> {
    pub center: Vector2<S>,
    pub heading: S,
    /// `∂center/∂α_j` as columns.
    pub dcenter: [Vector2<S>; 2],
    /// `∂heading/∂α_j`.
    pub dheading: [S; 2],
}

/// Places the three bodies in the central body's frame.
pub fn body_placements<S: Scalar>(p: &ModelParams<S>, r: &Vector2<S>) -> [BodyPlacement<S>; 3] {
    let z = S::zero();
    let one = S::one();
    let (s1, c1) = r[0].sin_cos();
    let (s2, c2) = r[1].sin_cos();
    [
        BodyPlacement {
            center: Vector2::zeros(),
            heading: z,
            dcenter: [Vector2::zeros(); 2],
            dheading: [z, z],
        },
        BodyPlacement {
            center: Vector2::new(-p.h - p.r * c1, p.r * s1),
            heading: -r[0],
            dcenter: [Vector2::new(p.r * s1, p.r * c1), Vector2::zeros()],
            dheading: [-one, z],
        },
        BodyPlacement {
            center: Vector2::new(p.h + p.r * c2, p.r * s2),
            heading: r[1],
            dcenter: [Vector2::zeros(), Vector2::new(-p.r * s2, p.r * c2)],
            dheading: [z, one],
        },
    ]
}

/// Divisor of the local connection; vanishes on the singular shapes.
pub fn connection_divisor<S: Scalar>(p: &ModelParams<S>, r: &Vector2<S>) -> S {
    p.h * (r[0] - r[1]).sin() + p.r * r[0].sin() - p.r * r[1].sin()
}

pub(crate) fn check_shape<S: Scalar>(p: &ModelParams<S>, r: &Vector2<S>) -> Result<S> {
    let q = connection_divisor(p, r);
    if !(q.abs() >= p.q_guard) {
        return Err(Error::SingularShape { q: q.value() });
    }
    Ok(q)
}

/// Local connection `A(r)` with `ξ = -A(r) ṙ`.
pub fn local_connection<S: Scalar>(p: &ModelParams<S>, r: &Vector2<S>) -> Result<Matrix3x2<S>> {
    let q = check_shape(p, r)?;
    let f = p.r / q;
    let (s1, c1) = r[0].sin_cos();
    let (s2, c2) = r[1].sin_cos();
    let z = S::zero();
    Ok(Matrix3x2::new(
        f * (p.r + p.h * c2),
        f * (p.r + p.h * c1),
        z,
        z,
        f * s2,
        f * s1,
    ))
}

/// Central body velocity `ξ = -A(r) ṙ`.
pub fn body_velocity<S: Scalar>(p: &ModelParams<S>, state: &ShapeState<S>) -> Result<BodyVelocity<S>> {
    let a = local_connection(p, &state.r)?;
    Ok(BodyVelocity::from_vector(&(-(a * state.dr))))
}

/// Rotates a body velocity of the central frame into world rates `(ẋ, ẏ, θ̇)`.
pub fn world_velocity<S: Scalar>(pose: &Pose<S>, xi: &BodyVelocity<S>) -> [S; 3] {
    let (s, c) = pose.theta.sin_cos();
    [c * xi.xi_x - s * xi.xi_y, s * xi.xi_x + c * xi.xi_y, xi.xi_theta]
}

/// Velocity of one body, in its own frame, given the central body velocity and
/// the shape rate.
pub fn body_frame_velocity<S: Scalar>(
    placement: &BodyPlacement<S>,
    xi: &Vector3<S>,
    dr: &Vector2<S>,
) -> Vector3<S> {
    let c = &placement.center;
    let v = Vector2::new(xi[0] - xi[2] * c[1], xi[1] + xi[2] * c[0])
        + placement.dcenter[0] * dr[0]
        + placement.dcenter[1] * dr[1];
    let w = xi[2] + placement.dheading[0] * dr[0] + placement.dheading[1] * dr[1];
    let (s, co) = placement.heading.sin_cos();
    Vector3::new(co * v[0] + s * v[1], -s * v[0] + co * v[1], w)
}

/// Body Jacobians `J_b(r)`, mapping `ṙ` to each body's velocity in its own
/// frame. `J_1 = -A(r)`.
pub fn body_jacobians<S: Scalar>(p: &ModelParams<S>, r: &Vector2<S>) -> Result<[Matrix3x2<S>; 3]> {
    let a = local_connection(p, r)?;
    let bodies = body_placements(p, r);
    let mut out = [Matrix3x2::zeros(); 3];
    for j in 0..2 {
        let mut e = Vector2::zeros();
        e[j] = S::one();
        let xi = -(a * e);
        for (b, placement) in bodies.iter().enumerate() {
            out[b].set_column(j, &body_frame_velocity(placement, &xi, &e));
        }
    }
    // the central row is exact by construction
    out[0] = -a;
    Ok(out)
}

/// World position of each body's center.
pub fn body_world_positions<S: Scalar>(p: &ModelParams<S>, pose: &Pose<S>, r: &Vector2<S>) -> [Vector2<S>; 3] {
    let (s, c) = pose.theta.sin_cos();
    body_placements(p, r).map(|b| {
        Vector2::new(
            pose.x + c * b.center[0] - s * b.center[1],
            pose.y + s * b.center[0] + c * b.center[1],
        )
    })
}
