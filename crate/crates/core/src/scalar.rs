//! Scalar abstraction shared by every solver in the crate.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra as na;
use num_traits as nt;

/// Real floating point type the solvers are generic over (`f32` or `f64`).
pub trait Real:
    na::RealField
    + Copy
    + nt::FromPrimitive
    + nt::ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, rounding when `Self` is narrower.
    fn lit(x: f64) -> Self;

    /// Lossy conversion used for reporting and serialization.
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Largest absolute entry of a matrix, zero for empty matrices.
pub fn max_abs<T: Real, R: na::Dim, C: na::Dim, S: na::RawStorage<T, R, C>>(
    m: &na::Matrix<T, R, C, S>,
) -> T {
    m.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// True when all entries are finite.
pub fn all_finite<T: Real, R: na::Dim, C: na::Dim, S: na::RawStorage<T, R, C>>(
    m: &na::Matrix<T, R, C, S>,
) -> bool {
    m.iter().all(|x| x.is_finite())
}
