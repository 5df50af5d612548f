//! Additive-model extrapolation by backfitting.
//!
//! Fits `y ≈ α + Σ_j f_j(x_j)` by cycling over the predictors and refitting
//! the random forest smoother ([`RfProgression`]) of the partial residuals
//! `R_ij = y_i - α - Σ_{l≠j} f_l(x_il)` on `x_j`.
//!
//! `α` stays the training mean of `y`. Each refitted smoother is centred on
//! the training set and its mean is kept as a separate offset, which leaves
//! both the residuals and the predictions unchanged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{ForestConfig, RfProgression};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveConfig {
    pub k: usize,
    pub forest: ForestConfig,
    pub max_sweeps: usize,
    /// Convergence tolerance on the largest change of fitted training values
    /// over one sweep; `None` means `1e-3 · sd(y)`.
    pub tol: Option<f64>,
}

impl AdditiveConfig {
    pub fn new(k: usize, forest: ForestConfig) -> Self {
        Self { k, forest, max_sweeps: 10, tol: None }
    }
}

/// Seed of the smoother refitted for coordinate `j` in sweep `sweep`.
pub fn component_seed(seed: u64, sweep: usize, j: usize) -> u64 {
    derive_seed(seed, &[sweep as u64, j as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveComponent {
    /// `None` when the partial residuals were constant.
    pub smoother: Option<RfProgression>,
    /// Training mean of the smoother's fitted values.
    pub offset: f64,
}

impl AdditiveComponent {
    fn raw(&self, x: f64) -> f64 {
        self.smoother.as_ref().map_or(self.offset, |s| s.predict(x))
    }

    /// Centred component value `f̂_j(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        self.raw(x) - self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTrace {
    pub max_change: f64,
    pub residual_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveModel {
    pub alpha_hat: f64,
    pub components: Vec<AdditiveComponent>,
    pub fit_trace: Vec<SweepTrace>,
    pub converged: bool,
}

fn column(x: &[Vec<f64>], j: usize) -> Vec<f64> {
    x.iter().map(|r| r[j]).collect()
}

/// Backfitting over the columns of `x` (row-major, `n × p`).
pub fn backfit(x: &[Vec<f64>], y: &[f64], config: &AdditiveConfig) -> Result<AdditiveModel> {
    let n = y.len();
    if x.len() != n {
        return Err(Error::InvalidParameter("x and y differ in length".into()));
    }
    let p = x.first().map_or(0, Vec::len);
    if p == 0 {
        return Err(Error::InvalidParameter("at least one predictor is required".into()));
    }
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidParameter("ragged predictor rows".into()));
    }
    if n <= 4 * config.k {
        return Err(Error::InsufficientData { needed: 4 * config.k + 1, got: n });
    }
    config.forest.validate()?;

    let alpha_hat = crate::stats::mean(y);
    let tol = config.tol.unwrap_or(1e-3 * crate::stats::sd(y));
    let columns: Vec<Vec<f64>> = (0..p).map(|j| column(x, j)).collect();
    let mut components = vec![AdditiveComponent { smoother: None, offset: 0.0 }; p];
    // Uncentred fitted values per component, offsets included.
    let mut fitted = vec![vec![0.0; n]; p];
    let mut fit_trace = Vec::new();
    let mut converged = false;

    for sweep in 0..config.max_sweeps.max(1) {
        let before: Vec<f64> = (0..n).map(|i| fitted.iter().map(|f| f[i]).sum()).collect();
        for j in 0..p {
            let residuals: Vec<f64> = (0..n)
                .map(|i| y[i] - alpha_hat - (0..p).filter(|&l| l != j).map(|l| fitted[l][i]).sum::<f64>())
                .collect();
            let (lo, hi) = residuals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
            if hi - lo <= 1e-12 * (1.0 + hi.abs().max(lo.abs())) {
                let c = crate::stats::mean(&residuals);
                components[j] = AdditiveComponent { smoother: None, offset: c };
                fitted[j] = vec![c; n];
                continue;
            }
            let forest = config.forest.with_seed(component_seed(config.forest.seed, sweep, j));
            let smoother = RfProgression::fit(&columns[j], &residuals, config.k, &forest)?;
            let values: Vec<f64> = columns[j].par_iter().map(|&v| smoother.predict(v)).collect();
            let offset = crate::stats::mean(&values);
            components[j] = AdditiveComponent { smoother: Some(smoother), offset };
            fitted[j] = values;
        }
        let after: Vec<f64> = (0..n).map(|i| fitted.iter().map(|f| f[i]).sum()).collect();
        let max_change = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let residual_l1 = (0..n).map(|i| (y[i] - alpha_hat - after[i]).abs()).sum();
        fit_trace.push(SweepTrace { max_change, residual_l1 });
        // With one predictor the residuals never change, so one sweep is the fixed point.
        if p == 1 || max_change < tol {
            converged = true;
            break;
        }
    }
    Ok(AdditiveModel { alpha_hat, components, fit_trace, converged })
}

impl AdditiveModel {
    pub fn n_features(&self) -> usize {
        self.components.len()
    }

    /// Sum of component offsets, i.e. the intercept shift relative to `alpha_hat`.
    pub fn offset_total(&self) -> f64 {
        self.components.iter().map(|c| c.offset).sum()
    }

    /// Centred value of component `j` at `x`.
    pub fn component_value(&self, j: usize, x: f64) -> f64 {
        self.components[j].eval(x)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.components.len(), "predictor dimension mismatch");
        self.alpha_hat + self.offset_total() + x.iter().zip(&self.components).map(|(&v, c)| c.eval(v)).sum::<f64>()
    }
}

pub fn predict_additive(m: &AdditiveModel, x: &[f64]) -> f64 {
    m.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;

    fn data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = rng_from(seed, &[]);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let y = x.iter().map(|r| r[0] + r[1].powi(3) / 3.0 + 0.2 * rng.random::<f64>()).collect();
        (x, y)
    }

    fn cfg() -> AdditiveConfig {
        AdditiveConfig { max_sweeps: 3, ..AdditiveConfig::new(20, ForestConfig { n_trees: 30, seed: 3, ..Default::default() }) }
    }

    #[test]
    fn constant_response() {
        let (x, _) = data(200, 1);
        let m = backfit(&x, &vec![4.0; 200], &cfg()).unwrap();
        assert_eq!(m.alpha_hat, 4.0);
        assert!(m.components.iter().all(|c| c.smoother.is_none()));
        assert_eq!(m.predict(&[1.0, -1.0]), 4.0);
    }

    #[test]
    fn components_are_centred_and_additive() {
        let (x, y) = data(300, 2);
        let m = backfit(&x, &y, &cfg()).unwrap();
        assert_eq!(m.alpha_hat, crate::stats::mean(&y));
        for j in 0..2 {
            let vals: Vec<f64> = x.iter().map(|r| m.component_value(j, r[j])).collect();
            assert!(crate::stats::mean(&vals).abs() < 1e-9);
        }
        let a = m.predict(&[0.5, 1.0]);
        let b = m.predict(&[0.5, -1.5]);
        assert!(((a - b) - (m.component_value(1, 1.0) - m.component_value(1, -1.5))).abs() < 1e-12);
        assert!(!m.fit_trace.is_empty() && m.fit_trace.len() <= 3);
    }

    #[test]
    fn rejects_bad_shapes() {
        let (x, y) = data(50, 3);
        assert!(backfit(&x, &y[..49], &cfg()).is_err());
        assert!(backfit(&x, &y, &cfg()).is_err());
    }
}
