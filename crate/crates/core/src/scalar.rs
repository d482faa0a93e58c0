//! Scalar abstraction shared by the numerical modules.
//!
//! The math layers (rotations, plant, template, lifting, regression, QP) are
//! written against [`Real`] so they can be instantiated in `f32` for cheap
//! experiments or in `f64` for the reference pipeline. The orchestration
//! layers (MPC, harness) fix `f64`.

use nalgebra::RealField;
use num_traits::ToPrimitive;
use std::fmt::Debug;

/// floating point scalar: f32 or f64
pub trait Real: RealField + Copy + ToPrimitive + Debug + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

/// Lossy literal conversion, used for constants and tolerances.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
