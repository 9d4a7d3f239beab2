//! Floating point abstraction shared by every numeric module.
//!
//! The numeric engine runs on `f32` or `f64`. Matrix products go through
//! ndarray, which dispatches both types to its packed GEMM kernels.

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar usable by the signal, neural and detection modules.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Name written into persisted model files.
    const NAME: &'static str;

    /// Lossy for `f32` in general, exact for values that came from `f32`.
    fn of(value: f64) -> Self;

    /// Exact widening.
    fn widen(self) -> f64;
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(value: f64) -> Self {
        value
    }

    #[inline]
    fn widen(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(value: f64) -> Self {
        value as f32
    }

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
}
