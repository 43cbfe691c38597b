//! Scalar abstractions.
//!
//! Two layers: [`Field`] is the minimum needed by the linear-system code
//! (exact rationals qualify), [`Scalar`] adds floating-point operations for
//! everything that fits, optimizes or samples.

use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

/// Ordered field with an absolute value. Implemented by `f32`, `f64` and
/// `num_rational::Ratio<_>`.
pub trait Field:
    Clone + Num + Signed + PartialOrd + FromPrimitive + ToPrimitive + Debug
{
    /// Lossy conversion used only for tolerance checks and reporting.
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("value representable in scalar type")
    }
}

impl<T> Field for T where
    T: Clone + Num + Signed + PartialOrd + FromPrimitive + ToPrimitive + Debug
{
}

/// Floating-point scalar used by the panel, fitting and simulation code.
pub trait Scalar:
    Field + Float + FromStr + Display + Default + Send + Sync + Sum + 'static
{
    fn cst(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(Self::nan)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
