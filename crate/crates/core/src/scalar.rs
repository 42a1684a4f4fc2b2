//! Scalar abstraction shared by the geometric modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the geometry, camera and line modules.
///
/// Implemented for `f32` and `f64`. Tolerances quoted throughout the crate
/// assume `f64`; `f32` instantiations are meant for storage and rendering
/// paths where single precision is enough.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + std::fmt::Display {
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        nalgebra::convert(x)
    }

    #[inline]
    fn deg_to_rad(self) -> Self {
        self * Self::pi() / Self::lit(180.0)
    }

    #[inline]
    fn rad_to_deg(self) -> Self {
        self * Self::lit(180.0) / Self::pi()
    }

    /// Lossy conversion back to `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
