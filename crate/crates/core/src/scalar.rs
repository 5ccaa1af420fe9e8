use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating-point scalar the numerical core is generic over.
///
/// Implemented for `f32` and `f64`. Everything statistical in this crate is
/// written against this trait; the simulation harness and CLI pin `f64`.
pub trait Scalar: NdFloat + FromPrimitive + Sum + Default + Debug + Display {
    /// Largest linear predictor magnitude passed to `exp`.
    const THETA_CLAMP: Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {
    const THETA_CLAMP: Self = 30.0;
}

impl Scalar for f64 {
    const THETA_CLAMP: Self = 30.0;
}
