//! Numeric element abstraction.
//!
//! The whole stack runs in one of two modes: `f64` for tests and gradient
//! checks, `f32` for training and inference throughput. Code is generic over
//! [`Scalar`] so the two never mix inside a single tape; the mode is chosen
//! once at the entry point and monomorphized from there.

use rand::distributions::uniform::SampleUniform;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

pub trait Scalar:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + SampleUniform
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Mode name as it appears in CLI flags and run configs.
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;

    /// Numerically stable logistic function. Never overflows: large negative
    /// inputs underflow to 0, large positive inputs saturate to 1.
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
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_matches_reference_values() {
        // Reference values computed at 40 decimal digits.
        assert_eq!(4.0f64.sigmoid(), 0.9820137900379084);
        assert!((-4.0f64).sigmoid() - 0.017986209962091558 < 1e-18);
        assert!(((-50.0f64).sigmoid() - 1.928749847963918e-22).abs() < 1e-34);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(50.0f64.sigmoid(), 1.0);
        assert_eq!(800.0f64.sigmoid(), 1.0);
        assert_eq!((-800.0f64).sigmoid(), 0.0);
        assert_eq!(100.0f32.sigmoid(), 1.0);
        // exp(-100) is subnormal in f32; the result must stay finite and tiny.
        let tiny = (-100.0f32).sigmoid();
        assert!(tiny >= 0.0 && tiny < 1e-40, "sigmoid(-100) = {tiny}");
        for v in [-800.0f64, -50.0, 0.0, 50.0, 800.0] {
            assert!(v.sigmoid().is_finite());
        }
    }

    #[test]
    fn sigmoid_is_symmetric_about_half() {
        for v in [0.1f64, 0.7, 1.3, 2.9, 10.0] {
            let s = v.sigmoid() + (-v).sigmoid();
            assert!((s - 1.0).abs() < 1e-15, "sigmoid({v}) asymmetric: {s}");
        }
    }
}
