//! Floating-point scalar abstraction shared by the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use rustfft::FftNum;

/// Real scalar used for intermediate image arithmetic: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + FftNum + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts a constant; panics only for values the type cannot represent at all.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_intensity(v: u8) -> Self {
        Self::lit(f64::from(v))
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Rounds half up and clamps to an 8-bit intensity.
    #[inline]
    fn to_intensity(self) -> u8 {
        let v = (self + Self::lit(0.5)).floor();
        if v.is_nan() || v <= Self::zero() {
            0
        } else if v >= Self::lit(255.0) {
            255
        } else {
            v.to_u8().unwrap_or(255)
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
