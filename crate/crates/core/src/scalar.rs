//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Real scalar usable throughout the crate (`f32` or `f64`).
///
/// Anything implementing nalgebra's `RealField` that can also be exported
/// to `f64` qualifies.
pub trait Real: RealField + Copy + ToPrimitive {}

impl<T> Real for T where T: RealField + Copy + ToPrimitive {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts a count into the working scalar.
#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    nalgebra::convert(n as f64)
}

/// Lossy export to `f64`, used for reporting.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Machine epsilon of the working scalar.
#[inline]
pub fn eps<T: Real>() -> T {
    T::default_epsilon()
}
