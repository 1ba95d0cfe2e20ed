//! Elastic kinematic snake model: wheel-constrained kinematics, reduced shape
//! dynamics and a full-coordinate constrained reference.

pub mod constrained;
pub mod full;
pub mod kinematics;
pub mod reduced;

pub use kinematics::{
    body_jacobians, body_velocity, connection_divisor, local_connection, world_velocity, BodyVelocity, Pose,
    ShapeState,
};
pub use reduced::{
    bias_forces, forward_dynamics, inverse_dynamics, kinetic_energy, potential, reduced_mass_matrix, spring_torque,
    total_energy,
};
