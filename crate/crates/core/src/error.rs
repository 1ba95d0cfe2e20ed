use thiserror::Error;

/// Errors raised by the model, the integrator and the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape is singular: |Q| = {q:e} below guard")]
    SingularShape { q: f64 },

    #[error("reduced mass matrix is ill-conditioned: cond = {cond:e}")]
    IllConditioned { cond: f64 },

    #[error("singularity approached at t = {t}")]
    SingularityApproached { t: f64 },

    #[error("integrator step failure at t = {t} (h = {h:e})")]
    StepFailure { t: f64, h: f64 },

    #[error("no turning point found before t = {t}")]
    TurningPointMissed { t: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("solution is a brake orbit (min joint speed {min_speed:e} rad/s)")]
    ConvergedToBrakeOrbit { min_speed: f64 },

    #[error("path has {samples} samples, at least {required} required")]
    PathTooCoarse { samples: usize, required: usize },

    #[error("displacement {d} must be positive")]
    ZeroDisplacement { d: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
