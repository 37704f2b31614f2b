//! Scalar abstraction: every numeric kernel in this crate is generic over a
//! floating-point scalar so the same code runs at f32 or f64 precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating-point scalar usable by tensors, graphs and metrics.
pub trait Scalar:
    Float + Sum<Self> + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_generic<T: Scalar>(xs: &[T]) -> T {
        xs.iter().copied().sum()
    }

    #[test]
    fn works_for_both_widths() {
        assert_eq!(sum_generic(&[1.0f32, 2.0, 3.0]), 6.0);
        assert_eq!(sum_generic(&[1.0f64, 2.0, 3.0]), 6.0);
        assert_eq!(f32::from_usize(7), 7.0);
        assert_eq!(f64::from_f64(0.25), 0.25);
    }
}
