//! Floating-point abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the library is generic over: `f32` or `f64`.
///
/// Tolerances quoted throughout the crate (1e-9, 1e-12, ...) assume `f64`;
/// `f32` instantiations are supported but only meet single-precision bounds.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + nalgebra::Scalar
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Widens to `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar convertible to f64")
    }

    /// Converts a count or index.
    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
