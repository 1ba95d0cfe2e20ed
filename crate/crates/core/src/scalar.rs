//! Scalar abstraction shared by the kinematics, dynamics and integrator.
//!
//! Everything below the solver layer is written against [`Scalar`], so the
//! same code runs in `f32`, `f64`, or forward-mode [`Dual`] numbers when a
//! derivative is needed.

use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive};

pub use crate::dual::Dual;

/// Floating point type usable by the model and the integrator.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + Debug
    + Default
    + Send
    + Sync
    + 'static
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Real part as `f64` (primal value for dual numbers).
    #[inline]
    fn value(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
impl<S: Scalar> Scalar for Dual<S> {}
