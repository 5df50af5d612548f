//! Simulation scenarios, covariate shifts and the evaluation loop.
//!
//! Regression functions of the univariate scenarios are harness conventions:
//!
//! | scenario     | f(x)                    |
//! |--------------|-------------------------|
//! | `sqrt2sided` | `sign(x) · 4 √|x|`      |
//! | `quadratic`  | `x² / 2`                |
//! | `cubic`      | `x³ / 10`               |
//!
//! The multivariate ones are `fracpoly`, `sign(x₁) 4 √|x₁| + x₂³/20`, and
//! `friedman`, `10 sin(π x₁x₂) + 20 (x₃ - 0.5)² + 10 x₄ + 5 x₅`. Noise is
//! centred normal, so the conditional median equals `f`.
//!
//! Predictors follow a multivariate t law built from one chi-square mixing
//! variable shared by a correlated normal vector.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::model::{FitOptions, FittedModel, Method};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioModel {
    Sqrt2Sided,
    Quadratic,
    Cubic,
    FracPoly,
    Friedman,
}

impl ScenarioModel {
    pub const ALL: [ScenarioModel; 5] = [Self::Sqrt2Sided, Self::Quadratic, Self::Cubic, Self::FracPoly, Self::Friedman];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sqrt2Sided => "sqrt2sided",
            Self::Quadratic => "quadratic",
            Self::Cubic => "cubic",
            Self::FracPoly => "fracpoly",
            Self::Friedman => "friedman",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Self::Sqrt2Sided | Self::Quadratic | Self::Cubic => 1,
            Self::FracPoly => 2,
            Self::Friedman => 5,
        }
    }

    /// Conditional median `m(x) = f(x)`.
    pub fn median(self, x: &[f64]) -> f64 {
        let signed_sqrt = |v: f64| v.signum() * 4.0 * v.abs().sqrt();
        match self {
            Self::Sqrt2Sided => signed_sqrt(x[0]),
            Self::Quadratic => x[0] * x[0] / 2.0,
            Self::Cubic => x[0].powi(3) / 10.0,
            Self::FracPoly => signed_sqrt(x[0]) + x[1].powi(3) / 20.0,
            Self::Friedman => {
                10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
                    + 20.0 * (x[2] - 0.5).powi(2)
                    + 10.0 * x[3]
                    + 5.0 * x[4]
            }
        }
    }

    fn default_noise_sd(self) -> f64 {
        match self {
            Self::Sqrt2Sided | Self::Quadratic | Self::Cubic => 1.0,
            Self::FracPoly | Self::Friedman => 2.0,
        }
    }

    fn default_dof(self) -> f64 {
        match self {
            Self::Sqrt2Sided | Self::Quadratic | Self::Cubic => 3.0,
            Self::FracPoly | Self::Friedman => 4.0,
        }
    }
}

impl fmt::Display for ScenarioModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::UnknownName(format!("scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub model: ScenarioModel,
    pub n_train: usize,
    pub noise_sd: f64,
    pub predictor_dof: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Training size 1000 with the scenario's default noise and predictor law.
    pub fn new(model: ScenarioModel, seed: u64) -> Self {
        Self { model, n_train: 1000, noise_sd: model.default_noise_sd(), predictor_dof: model.default_dof(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::InvalidParameter("n_train must be positive".into()));
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::InvalidParameter("noise_sd must be positive".into()));
        }
        if !(self.predictor_dof > 0.0) {
            return Err(Error::InvalidParameter("predictor_dof must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub model: ScenarioModel,
    /// Row-major `n × p` predictors.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// `m(x_i)` for each row.
    pub median: Vec<f64>,
}

impl Dataset {
    pub fn true_median(&self, x: &[f64]) -> f64 {
        self.model.median(x)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.iter().map(|r| r[j]).collect()
    }

    /// Responses drawn from the scenario's conditional law at fixed predictors.
    pub fn at_predictors(spec: &ScenarioSpec, x: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        spec.validate()?;
        if let Some(r) = x.iter().find(|r| r.len() != spec.model.dim()) {
            return Err(Error::InvalidParameter(format!(
                "scenario {} has {} predictors, got a row of {}",
                spec.model,
                spec.model.dim(),
                r.len()
            )));
        }
        Ok(Self::from_predictors(spec, x, &mut rng_from(seed, &[3])))
    }

    fn from_predictors(spec: &ScenarioSpec, x: Vec<Vec<f64>>, rng: &mut ChaCha8Rng) -> Self {
        let median: Vec<f64> = x.iter().map(|r| spec.model.median(r)).collect();
        let y = median.iter().map(|m| m + spec.noise_sd * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { model: spec.model, x, y, median }
    }
}

/// Draws `n` rows of a multivariate t with the given Cholesky factor.
fn sample_t(n: usize, dof: f64, chol: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let p = chol.nrows();
    let chi = ChiSquared::new(dof).expect("validated dof");
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let scale = (chi.sample(rng) / dof).sqrt();
            (0..p).map(|i| (0..=i).map(|j| chol[(i, j)] * z[j]).sum::<f64>() / scale).collect()
        })
        .collect()
}

fn equicorrelation_cholesky(p: usize, rho: f64) -> Result<DMatrix<f64>> {
    let m = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho });
    m.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidParameter(format!("correlation {rho} is not valid for {p} predictors")))
}

/// Training sample of a scenario; deterministic in `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_from(spec.seed, &[0]);
    let chol = DMatrix::identity(spec.model.dim(), spec.model.dim());
    let x = sample_t(spec.n_train, spec.predictor_dof, &chol, &mut rng);
    Ok(Dataset::from_predictors(spec, x, &mut rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    Mean,
    Variance,
    Covariance,
}

impl ShiftKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Variance => "variance",
            Self::Covariance => "covariance",
        }
    }
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "variance" => Ok(Self::Variance),
            "covariance" => Ok(Self::Covariance),
            _ => Err(Error::UnknownName(format!("shift `{s}`"))),
        }
    }
}

/// Test-time change of the predictor law.
///
/// `mean`: `X + c e_j`; `variance`: `s X`; `covariance`: the same t law with
/// every off-diagonal entry of the normal kernel's correlation set to `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    /// Zero-based coordinate moved by a mean shift.
    pub target_coord: usize,
    pub magnitude: f64,
}

impl ShiftSpec {
    pub fn mean(target_coord: usize, c: f64) -> Self {
        Self { kind: ShiftKind::Mean, target_coord, magnitude: c }
    }

    pub fn variance(s: f64) -> Self {
        Self { kind: ShiftKind::Variance, target_coord: 0, magnitude: s }
    }

    pub fn covariance(rho: f64) -> Self {
        Self { kind: ShiftKind::Covariance, target_coord: 0, magnitude: rho }
    }

    fn stream_id(&self) -> [u64; 3] {
        [self.kind as u64 + 1, self.target_coord as u64, self.magnitude.to_bits()]
    }
}

/// Draws test samples under a shifted predictor law; `Y | X` is unchanged.
#[derive(Debug, Clone)]
pub struct TestSampler {
    spec: ScenarioSpec,
    shift: Option<ShiftSpec>,
    chol: DMatrix<f64>,
}

pub fn shift(base: &ScenarioSpec, s: &ShiftSpec) -> Result<TestSampler> {
    base.validate()?;
    let p = base.model.dim();
    let mut chol = DMatrix::identity(p, p);
    match s.kind {
        ShiftKind::Mean => {
            if s.target_coord >= p {
                return Err(Error::InvalidParameter(format!("coordinate {} out of range for {p} predictors", s.target_coord)));
            }
            if !s.magnitude.is_finite() {
                return Err(Error::InvalidParameter("mean shift must be finite".into()));
            }
        }
        ShiftKind::Variance => {
            if !(s.magnitude > 0.0 && s.magnitude.is_finite()) {
                return Err(Error::InvalidParameter(format!("variance scale must be positive, got {}", s.magnitude)));
            }
        }
        ShiftKind::Covariance => {
            if p < 2 {
                return Err(Error::InvalidParameter("covariance shift needs at least two predictors".into()));
            }
            if !(s.magnitude.abs() < 1.0) {
                return Err(Error::InvalidParameter(format!("correlation must satisfy |rho| < 1, got {}", s.magnitude)));
            }
            chol = equicorrelation_cholesky(p, s.magnitude)?;
        }
    }
    Ok(TestSampler { spec: base.clone(), shift: Some(*s), chol })
}

impl TestSampler {
    /// Sampler for the unshifted training law.
    pub fn unshifted(base: &ScenarioSpec) -> Result<Self> {
        base.validate()?;
        let p = base.model.dim();
        Ok(Self { spec: base.clone(), shift: None, chol: DMatrix::identity(p, p) })
    }

    pub fn draw(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from(seed, &[1]);
        let mut x = sample_t(n, self.spec.predictor_dof, &self.chol, &mut rng);
        if let Some(s) = &self.shift {
            match s.kind {
                ShiftKind::Mean => x.iter_mut().for_each(|r| r[s.target_coord] += s.magnitude),
                ShiftKind::Variance => x.iter_mut().flatten().for_each(|v| *v *= s.magnitude),
                ShiftKind::Covariance => {}
            }
        }
        Dataset::from_predictors(&self.spec, x, &mut rng)
    }
}

/// Equidistant points on `[Q_X(0.01/n), Q_X(1 - 0.01/n)]` for the
/// scenario's univariate t predictor, `n = n_train`.
pub fn grid_test_points(spec: &ScenarioSpec, n_points: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.model.dim() != 1 {
        return Err(Error::InvalidParameter("grid test points need a univariate scenario".into()));
    }
    if n_points < 2 {
        return Err(Error::InvalidParameter("grid needs at least two points".into()));
    }
    let t = StudentsT::new(0.0, 1.0, spec.predictor_dof).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let level = 0.01 / spec.n_train as f64;
    let (lo, hi) = (t.inverse_cdf(level), t.inverse_cdf(1.0 - level));
    let step = (hi - lo) / (n_points - 1) as f64;
    Ok((0..n_points).map(|i| if i == n_points - 1 { hi } else { lo + step * i as f64 }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Against the realized responses.
    pub rmse: f64,
    /// Mean of `(m̃ - m)/m` over points with `|m| >= 0.05 · sd(y)`; NaN when
    /// no point qualifies.
    pub rel_median_err: f64,
}

pub fn evaluate(predictions: &[f64], y: &[f64], medians: &[f64]) -> Metrics {
    assert!(predictions.len() == y.len() && y.len() == medians.len(), "length mismatch");
    let n = y.len() as f64;
    let rmse = (predictions.iter().zip(y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n).sqrt();
    let guard = 0.05 * crate::stats::sd(y);
    let (sum, count) = predictions
        .iter()
        .zip(medians)
        .filter(|(_, m)| m.abs() >= guard && **m != 0.0)
        .fold((0.0, 0usize), |(s, c), (p, m)| (s + (p - m) / m, c + 1));
    Metrics { rmse, rel_median_err: if count == 0 { f64::NAN } else { sum / count as f64 } }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    /// Tail order statistics; `None` means `n_train / 10`.
    pub k: Option<usize>,
    pub forest: ForestConfig,
    pub max_sweeps: usize,
    pub test_size: usize,
    /// When false, `runtime_ms` is reported as 0 so output is reproducible.
    pub record_timing: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self { k: None, forest: ForestConfig::default(), max_sweeps: 10, test_size: 200, record_timing: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: ScenarioModel,
    pub shift: Option<ShiftSpec>,
    pub method: Method,
    pub repetition: usize,
    pub metrics: Metrics,
    pub runtime_ms: u64,
}

pub const RESULT_COLUMNS: [&str; 8] =
    ["scenario", "shift_kind", "magnitude", "method", "repetition", "rmse", "rel_median_err", "runtime_ms"];

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn results_to_csv(rows: &[ResultRow]) -> String {
    let mut out = RESULT_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let (kind, magnitude) = r.shift.map_or(("none", 0.0), |s| (s.kind.name(), s.magnitude));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.scenario,
            kind,
            fmt_float(magnitude),
            r.method,
            r.repetition,
            fmt_float(r.metrics.rmse),
            fmt_float(r.metrics.rel_median_err),
            r.runtime_ms
        ));
    }
    out
}

/// Test sample for one repetition: the deterministic grid for an unshifted
/// univariate scenario, otherwise draws from the (shifted) predictor law.
fn test_sample(spec: &ScenarioSpec, shift_spec: Option<&ShiftSpec>, size: usize, rep_seed: u64) -> Result<Dataset> {
    match shift_spec {
        None if spec.model.dim() == 1 => {
            let grid = grid_test_points(spec, size)?;
            let mut rng = rng_from(rep_seed, &[2]);
            Ok(Dataset::from_predictors(spec, grid.into_iter().map(|v| vec![v]).collect(), &mut rng))
        }
        None => Ok(TestSampler::unshifted(spec)?.draw(size, derive_seed(rep_seed, &[0]))),
        Some(s) => Ok(shift(spec, s)?.draw(size, derive_seed(rep_seed, &s.stream_id()))),
    }
}

/// Seeded repetitions of fit-and-evaluate for one test design.
pub fn run_experiment(
    scenario: &ScenarioSpec,
    shift_spec: Option<ShiftSpec>,
    methods: &[Method],
    repetitions: usize,
    options: &ExperimentOptions,
) -> Result<Vec<ResultRow>> {
    run_experiment_shifts(scenario, &[shift_spec], methods, repetitions, options)
}

/// Like [`run_experiment`] but evaluates every fitted model on several test
/// designs; each repetition's training sample and fits are shared across them.
pub fn run_experiment_shifts(
    scenario: &ScenarioSpec,
    shifts: &[Option<ShiftSpec>],
    methods: &[Method],
    repetitions: usize,
    options: &ExperimentOptions,
) -> Result<Vec<ResultRow>> {
    scenario.validate()?;
    let p = scenario.model.dim();
    for m in methods {
        if m.requires_univariate() && p != 1 {
            return Err(Error::InvalidParameter(format!("method {m} needs a univariate scenario")));
        }
    }
    for s in shifts.iter().flatten() {
        shift(scenario, s)?;
    }
    let fit_options = FitOptions {
        k: options.k.unwrap_or(scenario.n_train / 10),
        forest: options.forest.clone(),
        max_sweeps: options.max_sweeps,
    };

    let per_rep: Vec<Result<Vec<ResultRow>>> = (0..repetitions)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(scenario.seed, &[rep as u64]);
            let train = generate(&ScenarioSpec { seed: rep_seed, ..scenario.clone() })?;
            let tests = shifts
                .iter()
                .map(|s| test_sample(scenario, s.as_ref(), options.test_size, rep_seed))
                .collect::<Result<Vec<_>>>()?;
            let mut rows = Vec::new();
            for &method in methods {
                let opts = FitOptions { forest: fit_options.forest.with_seed(derive_seed(fit_options.forest.seed, &[rep as u64])), ..fit_options.clone() };
                let started = Instant::now();
                let model = FittedModel::fit(method, &train.x, &train.y, &opts)?;
                let fit_ms = started.elapsed().as_millis() as u64;
                for (s, test) in shifts.iter().zip(&tests) {
                    let started = Instant::now();
                    let preds: Vec<f64> = test.x.iter().map(|r| model.predict(r)).collect();
                    let elapsed = fit_ms + started.elapsed().as_millis() as u64;
                    rows.push(ResultRow {
                        scenario: scenario.model,
                        shift: *s,
                        method,
                        repetition: rep,
                        metrics: evaluate(&preds, &test.y, &test.median),
                        runtime_ms: if options.record_timing { elapsed } else { 0 },
                    });
                }
            }
            Ok(rows)
        })
        .collect();

    let mut rows = Vec::new();
    for r in per_rep {
        rows.extend(r?);
    }
    let shift_index = |s: &Option<ShiftSpec>| shifts.iter().position(|t| t == s).unwrap_or(usize::MAX);
    let method_index = |m: Method| methods.iter().position(|&t| t == m).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (shift_index(&r.shift), method_index(r.method), r.repetition));
    Ok(rows)
}
