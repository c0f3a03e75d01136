use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar accepted by the numerical kernels.
///
/// Both `Float` and `RealField` provide methods such as `sqrt` and `sin`,
/// so generic code calls them as `Float::sqrt(x)`.
pub trait Real:
    RealField
    + Float
    + FromPrimitive
    + ToPrimitive
    + rustfft::FftNum
    + Copy
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
