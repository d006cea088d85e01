//! Floating-point scalar abstraction used by the numerical kernels.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the metric kernels are generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Tolerance used when checking that probabilities sum to one.
    fn sum_tolerance() -> Self;

    /// Probabilities at or below this value contribute nothing to entropy terms.
    fn zero_mass() -> Self;

    fn from_count(count: u64) -> Self {
        Self::from_u64(count).expect("u64 counts are representable as floats")
    }

    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("literal representable")
    }
}

impl Scalar for f32 {
    fn sum_tolerance() -> Self {
        1e-5
    }

    fn zero_mass() -> Self {
        1e-15
    }
}

impl Scalar for f64 {
    fn sum_tolerance() -> Self {
        1e-9
    }

    fn zero_mass() -> Self {
        1e-15
    }
}
