//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the kernels, solvers and trainers are generic over.
///
/// Implemented for `f32` and `f64`. Random draws are always produced in `f64`
/// and then narrowed, so a seed yields the same stream for either width.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + ScalarOperand
    + LinalgScalar
    + FromStr
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Machine epsilon, as `f64`.
    fn eps_f64() -> f64 {
        Self::epsilon().as_f64()
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn from_usize<F: Real>(n: usize) -> F {
    F::from_usize(n).expect("usize representable in scalar type")
}
