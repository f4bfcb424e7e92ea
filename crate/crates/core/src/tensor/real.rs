use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating point element type of a [`Tensor`](super::Tensor).
///
/// Training runs in `f32`; gradient checks run in `f64`.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

const PAIRWISE_BLOCK: usize = 8;

/// Pairwise (cascade) summation. Error grows with `log n` instead of `n`.
pub fn pairwise_sum<T: Real>(values: &[T]) -> T {
    if values.len() <= PAIRWISE_BLOCK {
        let mut acc = T::zero();
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_small_sums() {
        assert_eq!(pairwise_sum::<f64>(&[]), 0.0);
        assert_eq!(pairwise_sum(&[1.0f64, 2.0, 3.0]), 6.0);
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
    }

    #[test]
    fn pairwise_beats_naive_drift_in_f32() {
        let v = vec![0.1f32; 1 << 18];
        let naive: f32 = v.iter().fold(0.0, |a, &b| a + b);
        let exact = 0.1f64 * (1 << 18) as f64;
        let pw = pairwise_sum(&v) as f64;
        assert!((pw - exact).abs() < (naive as f64 - exact).abs());
        assert!((pw - exact).abs() / exact < 1e-6);
    }
}
