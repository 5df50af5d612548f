//! Regression extrapolation beyond the training range.
//!
//! Predictors and responses are mapped to standard Laplace margins through a
//! semi-parametric estimate of their distribution functions (empirical bulk,
//! generalized Pareto tails). On that scale the conditional median becomes
//! approximately linear in the tails, so a linear fit there, transformed back,
//! extrapolates the original regression function.
//!
//! Modules:
//!
//! - [`tails`]: GPD distribution functions, constrained MLE, and the marginal
//!   transform to and from the Laplace scale.
//! - [`parametric`]: tail-line fits above a threshold and the both-sided
//!   construction split at the predictor median.
//! - [`forest`]: regression forests, localizing weights, the random forest
//!   extrapolation smoother and the constant / local-linear forest baselines.
//! - [`additive`]: backfitting for additive models with the forest smoother.
//! - [`simbench`]: data generators, covariate shifts and the evaluation loop.
//! - [`model`]: a single enum over all fitted methods plus the model file format.

pub mod additive;
pub mod error;
pub mod forest;
pub mod l1;
pub mod model;
pub mod parametric;
pub mod seed;
pub mod simbench;
pub mod stats;
pub mod tails;

pub use error::{Error, Result};

/// A fitted regression function of one real predictor.
pub trait Regressor1d {
    fn predict(&self, x: f64) -> f64;
}
