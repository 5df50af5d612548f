//! Uniform access to every fitted method and the versioned model file.
//!
//! A model file is a JSON document
//!
//! ```text
//! {"format": "progression-model", "version": 1, "predictors": [...], "model": {"method": ..., ...}}
//! ```
//!
//! Floats are written in shortest round-trip form, so a loaded model predicts
//! bit-identically to the one that was saved.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::additive::{backfit, AdditiveConfig, AdditiveModel};
use crate::error::{Error, Result};
use crate::forest::{BaselineForest, ForestConfig, RfProgression};
use crate::parametric::{fit_both_sided, BothSidedProgression};
use crate::tails::MarginalTransform;

pub const MODEL_FORMAT: &str = "progression-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ProgressionRf,
    ProgressionAdditive,
    ProgressionParametric,
    BaselineRf,
    BaselineLlf,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Self::ProgressionRf, Self::ProgressionAdditive, Self::ProgressionParametric, Self::BaselineRf, Self::BaselineLlf];

    pub fn name(self) -> &'static str {
        match self {
            Self::ProgressionRf => "progression-rf",
            Self::ProgressionAdditive => "progression-additive",
            Self::ProgressionParametric => "progression-parametric",
            Self::BaselineRf => "baseline-rf",
            Self::BaselineLlf => "baseline-llf",
        }
    }

    pub fn requires_univariate(self) -> bool {
        matches!(self, Self::ProgressionRf | Self::ProgressionParametric)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::UnknownName(format!("method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub k: usize,
    pub forest: ForestConfig,
    /// Backfitting sweeps for the additive method.
    pub max_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum FittedModel {
    ProgressionRf(RfProgression),
    ProgressionAdditive(AdditiveModel),
    /// Both-sided tail lines with a forest-progression bulk.
    ProgressionParametric(BothSidedProgression<RfProgression>),
    BaselineRf(BaselineForest),
    BaselineLlf(BaselineForest),
}

impl FittedModel {
    /// Fits `method` on row-major predictors.
    pub fn fit(method: Method, x: &[Vec<f64>], y: &[f64], options: &FitOptions) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidParameter("x and y differ in length".into()));
        }
        let p = x.first().map_or(0, Vec::len);
        if p == 0 {
            return Err(Error::InvalidParameter("at least one predictor is required".into()));
        }
        if method.requires_univariate() && p != 1 {
            return Err(Error::InvalidParameter(format!("method {method} needs exactly one predictor, got {p}")));
        }
        let x1 = || x.iter().map(|r| r[0]).collect::<Vec<f64>>();
        Ok(match method {
            Method::ProgressionRf => Self::ProgressionRf(RfProgression::fit(&x1(), y, options.k, &options.forest)?),
            Method::ProgressionAdditive => {
                let cfg = AdditiveConfig { max_sweeps: options.max_sweeps, ..AdditiveConfig::new(options.k, options.forest.clone()) };
                Self::ProgressionAdditive(backfit(x, y, &cfg)?)
            }
            Method::ProgressionParametric => {
                let xs = x1();
                let bulk = RfProgression::fit(&xs, y, options.k, &options.forest)?;
                Self::ProgressionParametric(fit_both_sided(&xs, y, options.k, bulk)?)
            }
            Method::BaselineRf => Self::BaselineRf(BaselineForest::fit(x, y, &options.forest)?),
            Method::BaselineLlf => Self::BaselineLlf(BaselineForest::fit(x, y, &options.forest)?),
        })
    }

    pub fn method(&self) -> Method {
        match self {
            Self::ProgressionRf(_) => Method::ProgressionRf,
            Self::ProgressionAdditive(_) => Method::ProgressionAdditive,
            Self::ProgressionParametric(_) => Method::ProgressionParametric,
            Self::BaselineRf(_) => Method::BaselineRf,
            Self::BaselineLlf(_) => Method::BaselineLlf,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Self::ProgressionRf(_) | Self::ProgressionParametric(_) => 1,
            Self::ProgressionAdditive(m) => m.n_features(),
            Self::BaselineRf(f) | Self::BaselineLlf(f) => f.forest.n_features(),
        }
    }

    /// Prediction at one predictor vector. The local-linear baseline falls
    /// back to the forest mean where its weighted design is singular.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Self::ProgressionRf(m) => m.predict(x[0]),
            Self::ProgressionAdditive(m) => m.predict(x),
            Self::ProgressionParametric(m) => m.predict(x[0]),
            Self::BaselineRf(f) => f.predict_mean(x),
            Self::BaselineLlf(f) => f.predict_local_linear(x).unwrap_or_else(|_| f.predict_mean(x)),
        }
    }

    /// Human-readable fit summary: per-tail GPD estimates and tail slopes.
    pub fn summary(&self, predictors: &[String]) -> String {
        let mut out = String::new();
        let name = |j: usize| predictors.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1));
        let _ = writeln!(out, "method: {}", self.method());
        match self {
            Self::ProgressionRf(m) => {
                describe_transform(&mut out, &name(0), &m.transform_x);
                describe_transform(&mut out, "y", &m.transform_y);
                let (lo, hi) = m.tail_slopes();
                let _ = writeln!(out, "tail slopes: lower a = {lo:.6}, upper a = {hi:.6}");
            }
            Self::ProgressionAdditive(m) => {
                let _ = writeln!(out, "alpha = {:.6}, sweeps = {}, converged = {}", m.alpha_hat, m.fit_trace.len(), m.converged);
                for (j, c) in m.components.iter().enumerate() {
                    match &c.smoother {
                        Some(s) => {
                            let _ = writeln!(out, "component {}:", name(j));
                            describe_transform(&mut out, &name(j), &s.transform_x);
                            describe_transform(&mut out, "residual", &s.transform_y);
                            let (lo, hi) = s.tail_slopes();
                            let _ = writeln!(out, "  tail slopes: lower a = {lo:.6}, upper a = {hi:.6}");
                        }
                        None => {
                            let _ = writeln!(out, "component {}: constant", name(j));
                        }
                    }
                }
            }
            Self::ProgressionParametric(m) => {
                let _ = writeln!(out, "split point = {:.6}", m.split_point);
                for (label, side) in [("upper", &m.upper), ("lower", &m.lower)] {
                    let _ = writeln!(out, "{label} half:");
                    describe_transform(&mut out, &name(0), &side.transform_x);
                    describe_transform(&mut out, "y", &side.transform_y);
                    let _ = writeln!(out, "  tail slope a = {:.6}, b = {:.6}", side.params.a, side.params.b);
                }
            }
            Self::BaselineRf(f) | Self::BaselineLlf(f) => {
                let cfg = f.forest.config();
                let _ = writeln!(out, "n = {}, trees = {}, min_leaf = {}", f.forest.n_train(), cfg.n_trees, cfg.min_leaf);
            }
        }
        out
    }
}

fn describe_transform(out: &mut String, label: &str, t: &MarginalTransform) {
    let (l, u) = (t.lower(), t.upper());
    let _ = writeln!(out, "  {label}: n = {}, k = {}, tau0 = {}", t.n(), u.k, u.tau0);
    let _ = writeln!(
        out,
        "    lower tail: threshold = {:.6}, sigma = {:.6}, gamma = {:.6}",
        l.threshold, l.params.sigma, l.params.gamma
    );
    let _ = writeln!(
        out,
        "    upper tail: threshold = {:.6}, sigma = {:.6}, gamma = {:.6}",
        u.threshold, u.params.sigma, u.params.gamma
    );
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub predictors: Vec<String>,
    pub model: FittedModel,
}

impl ModelFile {
    pub fn new(predictors: Vec<String>, model: FittedModel) -> Self {
        Self { format: MODEL_FORMAT.into(), version: MODEL_VERSION, predictors, model }
    }

    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string(self).expect("model serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("unexpected format tag `{}`", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {}", file.version)));
        }
        if file.predictors.len() != file.model.n_features() {
            return Err(Error::ModelFormat("predictor names do not match the model dimension".into()));
        }
        file.validate_transforms()?;
        Ok(file)
    }

    fn validate_transforms(&self) -> Result<()> {
        let check = |m: &RfProgression| -> Result<()> {
            m.transform_x.validate()?;
            m.transform_y.validate()
        };
        match &self.model {
            FittedModel::ProgressionRf(m) => check(m),
            FittedModel::ProgressionAdditive(m) => m.components.iter().filter_map(|c| c.smoother.as_ref()).try_for_each(check),
            FittedModel::ProgressionParametric(m) => {
                check(&m.bulk)?;
                for side in [&m.upper, &m.lower] {
                    side.transform_x.validate()?;
                    side.transform_y.validate()?;
                }
                Ok(())
            }
            FittedModel::BaselineRf(_) | FittedModel::BaselineLlf(_) => Ok(()),
        }
    }
}
