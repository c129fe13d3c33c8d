//! Scalar abstraction so the numeric kernels work over `f32` or `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar for embedding matrices and score math.
///
/// Embedding storage uses `f32` (the on-disk precision); tree and reward
/// bookkeeping uses `f64`. Both route through the same kernels.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Convert a finite `f64` constant (weights, tolerances) into this scalar.
    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant")
    }

    /// Widen to `f64` for reporting and cross-precision comparisons.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
