//! Scalar abstraction for the numeric core.

use std::fmt::{Debug, Display};

use num_traits as nt;

/// Floating-point element type of tensors and parameters: `f32` or `f64`.
pub trait Scalar:
    nt::Float
    + nt::FromPrimitive
    + nt::ToPrimitive
    + nt::NumAssign
    + std::iter::Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Values outside the type's range saturate to infinity.
    fn lit(x: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(x).unwrap_or_else(|| {
            if x > 0.0 {
                Self::infinity()
            } else {
                Self::neg_infinity()
            }
        })
    }

    fn as_f64(self) -> f64 {
        nt::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
