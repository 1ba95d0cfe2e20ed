//! Elastic kinematic snake: natural-dynamics gait synthesis and evaluation.

pub mod checks;
pub mod dual;
pub mod dynamics;
pub mod efficiency;
pub mod error;
pub mod integrate;
pub mod modal;
pub mod orbits;
pub mod params;
pub mod scalar;
pub mod scaling;
pub mod shooting;
pub mod sim;

pub use dual::Dual;
pub use error::{Error, Result};
pub use params::ModelParams;
pub use scalar::Scalar;

/// `f64` instances of the generic model types.
pub type Params = ModelParams<f64>;
pub type State = dynamics::ShapeState<f64>;
pub type Flow = sim::ShapeFlow<f64>;
pub type Dual64 = Dual<f64>;
