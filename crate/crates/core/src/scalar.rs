//! Scalar abstraction for the sampler kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point type the time grids and Picard kernels are written over.
///
/// Implemented for `f32` and `f64`. Linear algebra (oracle internals, exact
/// laws, metrics) always runs in `f64`; values cross that boundary through
/// [`Scalar::of`] and [`Scalar::f64`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + Serialize + DeserializeOwned + 'static
{
    /// Converts an `f64` constant into this type.
    fn of(x: f64) -> Self;

    fn f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Squared Euclidean distance between two equally sized slices.
pub(crate) fn dist_sq<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .fold(F::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}
