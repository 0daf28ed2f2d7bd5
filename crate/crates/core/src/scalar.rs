//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the geometry and statistics code is generic over: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + ScalarOperand + Debug + Display + Sum + Default + Send + Sync + 'static
{
    /// Lossless-or-nearest conversion from an `f64` constant.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    fn from_f32_lossy(v: f32) -> Self {
        Self::from_f32(v).expect("f32 representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
