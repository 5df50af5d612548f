//! Parametric tail extrapolation.
//!
//! Above a predictor threshold, the conditional median on the Laplace scale
//! is approximated by `a x* + (x*)^β b` with `a ∈ [-1, 1]`. The coefficients
//! come from a median regression of the transformed exceedance pairs (with
//! `β = 0`), and predictions are mapped back through the response transform.
//!
//! [`BothSidedProgression`] splits the training sample at the predictor median
//! and fits an upper tail on `(X⁺, Y⁺)` and a lower tail on `(-X⁻, Y⁻)`; the
//! central region is delegated to an arbitrary in-range regressor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l1;
use crate::tails::{fit_marginal, laplace_quantile, MarginalTransform, MIN_EXCEEDANCES};
use crate::Regressor1d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressionParams {
    pub a: f64,
    pub beta: f64,
    pub b: f64,
}

impl ProgressionParams {
    pub fn new(a: f64, beta: f64, b: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&a) {
            return Err(Error::InvalidParameter(format!("tail slope must lie in [-1, 1], got {a}")));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("beta must lie in [0, 1), got {beta}")));
        }
        if a.abs() == 1.0 && beta != 0.0 {
            return Err(Error::InvalidParameter("beta must be 0 when |a| = 1".into()));
        }
        if !b.is_finite() {
            return Err(Error::InvalidParameter(format!("b must be finite, got {b}")));
        }
        Ok(Self { a, beta, b })
    }

    /// Median approximation on the Laplace scale.
    pub fn laplace_median(&self, xstar: f64) -> f64 {
        let sub = if self.beta == 0.0 { 1.0 } else { xstar.powf(self.beta) };
        self.a * xstar + sub * self.b
    }
}

/// Median regression `min Σ 1{x*_i > u*} |y*_i - a x*_i - b|` with
/// `a ∈ [-1, 1]` and `β = 0`.
pub fn fit_tail_line(xstar: &[f64], ystar: &[f64], threshold_star: f64) -> Result<ProgressionParams> {
    if xstar.len() != ystar.len() {
        return Err(Error::InvalidParameter("xstar and ystar differ in length".into()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        xstar.iter().zip(ystar).filter(|(&x, _)| x > threshold_star).map(|(&x, &y)| (x, y)).unzip();
    if xs.len() < MIN_EXCEEDANCES {
        return Err(Error::InsufficientData { needed: MIN_EXCEEDANCES, got: xs.len() });
    }
    let w = vec![1.0; xs.len()];
    let fit = l1::fit_line(&xs, &ys, &w, -1.0, 1.0)?;
    Ok(ProgressionParams { a: fit.slope.clamp(-1.0, 1.0), beta: 0.0, b: fit.intercept })
}

/// Tail-line objective, shared with the verification oracles.
pub fn tail_line_objective(xstar: &[f64], ystar: &[f64], threshold_star: f64, p: &ProgressionParams) -> f64 {
    xstar
        .iter()
        .zip(ystar)
        .filter(|(&x, _)| x > threshold_star)
        .map(|(&x, &y)| (y - p.laplace_median(x)).abs())
        .sum()
}

/// `Q̂_Y(F_L(a x̃* + (x̃*)^β b))` with `x̃* = Q_L(F̂_X(x))`.
pub fn progression_predict(x: f64, tx: &MarginalTransform, ty: &MarginalTransform, p: &ProgressionParams) -> f64 {
    ty.from_laplace(p.laplace_median(tx.to_laplace(x)))
}

/// A one-sided (upper) tail model fitted on a full sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailProgression {
    pub transform_x: MarginalTransform,
    pub transform_y: MarginalTransform,
    pub params: ProgressionParams,
}

impl TailProgression {
    /// Fits marginals with `k` order statistics and the tail line on the `k`
    /// pairs above the predictor threshold.
    pub fn fit(x: &[f64], y: &[f64], k: usize) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidParameter("x and y differ in length".into()));
        }
        let transform_x = fit_marginal(x, k)?;
        let transform_y = fit_marginal(y, k)?;
        let xstar: Vec<f64> = x.iter().map(|&v| transform_x.to_laplace(v)).collect();
        let ystar: Vec<f64> = y.iter().map(|&v| transform_y.to_laplace(v)).collect();
        let params = fit_tail_line(&xstar, &ystar, laplace_quantile(transform_x.upper().tau0))?;
        Ok(Self { transform_x, transform_y, params })
    }

    /// Predictor threshold above which the tail formula applies.
    pub fn threshold(&self) -> f64 {
        self.transform_x.upper().threshold
    }

    pub fn predict(&self, x: f64) -> f64 {
        progression_predict(x, &self.transform_x, &self.transform_y, &self.params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BothSidedProgression<B> {
    /// Lower empirical median of the training predictor.
    pub split_point: f64,
    /// Fitted on `(X⁺, Y⁺)`.
    pub upper: TailProgression,
    /// Fitted on `(-X⁻, Y⁻)`.
    pub lower: TailProgression,
    pub bulk: B,
}

/// Splits at the predictor median and fits each tail on its half. Requires
/// `n >= 8k` so that each half satisfies the marginal fit's `k < n/4`.
pub fn fit_both_sided<B: Regressor1d>(x: &[f64], y: &[f64], k: usize, bulk: B) -> Result<BothSidedProgression<B>> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter("x and y differ in length".into()));
    }
    if x.len() < 8 * k {
        return Err(Error::InsufficientData { needed: 8 * k, got: x.len() });
    }
    let split_point = crate::stats::lower_median(x);
    let (mut xp, mut yp, mut xm, mut ym) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (&xi, &yi) in x.iter().zip(y) {
        if xi > split_point {
            xp.push(xi);
            yp.push(yi);
        } else {
            xm.push(-xi);
            ym.push(yi);
        }
    }
    let upper = TailProgression::fit(&xp, &yp, k)?;
    let lower = TailProgression::fit(&xm, &ym, k)?;
    Ok(BothSidedProgression { split_point, upper, lower, bulk })
}

impl<B: Regressor1d> BothSidedProgression<B> {
    /// `[lower, upper]` predictor range served by the bulk regressor.
    pub fn bulk_range(&self) -> (f64, f64) {
        (-self.lower.threshold(), self.upper.threshold())
    }

    pub fn predict(&self, x: f64) -> f64 {
        let (lo, hi) = self.bulk_range();
        if x > hi {
            self.upper.predict(x)
        } else if x < lo {
            self.lower.predict(-x)
        } else {
            self.bulk.predict(x)
        }
    }
}

impl<B: Regressor1d> Regressor1d for BothSidedProgression<B> {
    fn predict(&self, x: f64) -> f64 {
        BothSidedProgression::predict(self, x)
    }
}
