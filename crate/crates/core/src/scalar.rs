//! Scalar abstraction shared by every numerical module.
//!
//! All linear algebra runs on `nalgebra` dense types over a [`Real`] scalar.
//! `f64` is the working precision of the CLI and the acceptance suite; `f32`
//! is supported for the pure linear-algebra paths.

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Real floating-point scalar: `f32` or `f64`.
pub trait Real: RealField + Copy + ToPrimitive + std::fmt::Display {
    /// Converts an `f64` literal into this scalar type.
    fn lit(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn is_finite_val(self) -> bool {
        self.to_f64_lossy().is_finite()
    }
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
}
