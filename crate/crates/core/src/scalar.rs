//! Floating-point abstraction shared by every numerical kernel in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// A real scalar the model, estimator, monitor and calibrator can run on.
///
/// Implemented for `f32` and `f64`. The associated constants carry the
/// default solver tolerances, which have to scale with the precision.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Default sup-norm tolerance on the score vector for a converged fit.
    const SCORE_TOL: f64;
    /// Default step-norm tolerance for a converged fit.
    const STEP_TOL: f64;
    /// Largest condition number of the information matrix accepted by the solver.
    const MAX_CONDITION: f64;

    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite inputs of either implementing type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float converts to f64")
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f64 {
    const SCORE_TOL: f64 = 1e-8;
    const STEP_TOL: f64 = 1e-10;
    const MAX_CONDITION: f64 = 1e12;

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Real for f32 {
    const SCORE_TOL: f64 = 1e-2;
    const STEP_TOL: f64 = 1e-5;
    const MAX_CONDITION: f64 = 1e6;

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(-x))`, evaluated on the stable branch.
#[inline]
pub fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for i in -40..=40 {
            let x = i as f64 * 0.5;
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() < 1e-12 * naive.max(1.0));
        }
        assert_eq!(softplus(1000.0_f64), 1000.0);
        assert!(softplus(-1000.0_f64) >= 0.0);
    }

    #[test]
    fn logistic_symmetry() {
        for i in -30..=30 {
            let x = i as f64 * 0.7;
            assert!((logistic(x) + logistic(-x) - 1.0).abs() < 1e-15);
        }
        assert_eq!(logistic(0.0_f32), 0.5);
    }
}
