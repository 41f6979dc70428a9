//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar used throughout the crate: `f32` for fast training, `f64` for
/// oracles and gradient checks.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Bytes per value in the scalar's native little-endian encoding.
    const BYTES: usize;

    /// Converts a literal. Every `f64` is representable (possibly rounded).
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to any Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    #[inline]
    fn as_f32(self) -> f32 {
        self.to_f32().expect("Scalar converts to f32")
    }

    /// Numerically stable `ln(1 + e^x)`.
    #[inline]
    fn softplus(self) -> Self {
        let zero = Self::zero();
        self.max(zero) + (-self.abs()).exp().ln_1p()
    }

    /// Logistic sigmoid, the derivative of [`Scalar::softplus`].
    #[inline]
    fn sigmoid(self) -> Self {
        let one = Self::one();
        if self >= Self::zero() {
            one / (one + (-self).exp())
        } else {
            let e = self.exp();
            e / (one + e)
        }
    }
}

impl Scalar for f32 {
    const BYTES: usize = 4;
}

impl Scalar for f64 {
    const BYTES: usize = 8;
}

/// Numerically stable log-sum-exp. Returns `-inf` for an empty slice.
pub fn log_sum_exp<S: Scalar>(values: &[S]) -> S {
    let max = values.iter().copied().fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        return max;
    }
    let sum: S = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax of `values`, computed with the max-shift.
pub fn softmax<S: Scalar>(values: &[S]) -> Vec<S> {
    let lse = log_sum_exp(values);
    values.iter().map(|&v| (v - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(1000.0f64.softplus(), 1000.0);
        assert!((-1000.0f64).softplus() >= 0.0);
        assert!(((0.0f64).softplus() - 2f64.ln()).abs() < 1e-15);
        assert!((1e30f32).softplus().is_finite());
    }

    #[test]
    fn sigmoid_matches_softplus_derivative() {
        for &x in &[-5.0f64, -0.3, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = ((x + h).softplus() - (x - h).softplus()) / (2.0 * h);
            assert!((fd - x.sigmoid()).abs() < 1e-9);
        }
    }

    #[test]
    fn log_sum_exp_handles_large_magnitudes() {
        let v = [1000.0f64, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let p = softmax(&[-1e4f64, 0.0]);
        assert_eq!(p[1], 1.0);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }
}
