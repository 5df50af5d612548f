//! Regression forests and the forest-localized extrapolation smoother.
//!
//! A [`ForestModel`] is a CART ensemble grown on subsamples drawn without
//! replacement. Its localizing weights at a query are
//!
//! ```text
//! w_i(x) = (1/B) Σ_b 1{i ∈ leaf_b(x)} / |leaf_b(x)|
//! ```
//!
//! [`RfProgression`] grows the forest on Laplace-scale data and fits, at each
//! query, a weighted L1 line with slope in `[-1, 1]`; the line's level is
//! mapped back to the response scale. Beyond the training range every tree
//! routes the query to the same boundary leaf, so the weights and the fitted
//! line are fixed and the extrapolation is exactly linear on the Laplace
//! scale.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l1;
use crate::seed::rng_from;
use crate::tails::{fit_marginal, MarginalTransform};
use crate::Regressor1d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Fraction of the training sample drawn, without replacement, per tree.
    pub subsample_fraction: f64,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 500, min_leaf: 5, subsample_fraction: 0.5, max_depth: None, seed: 0 }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParameter("n_trees must be positive".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidParameter("min_leaf must be positive".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "subsample_fraction must lie in (0, 1], got {}",
                self.subsample_fraction
            )));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidParameter("max_depth must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Queries with `x[feature] <= value` go left.
    Split { feature: usize, value: f64, left: usize, right: usize },
    Leaf { indices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(&self, query: &[f64]) -> &[usize] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split { feature, value, left, right } => {
                    id = if query[*feature] <= *value { *left } else { *right };
                }
                Node::Leaf { indices } => return indices,
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[usize]> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { indices } => Some(indices.as_slice()),
            Node::Split { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, id: usize) -> usize {
            match &t.nodes[id] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

struct SplitChoice {
    feature: usize,
    value: f64,
    position: usize,
    score: f64,
    order: Vec<usize>,
}

fn best_split(columns: &[Vec<f64>], y: &[f64], idx: &[usize], min_leaf: usize) -> Option<SplitChoice> {
    let m = idx.len();
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / m as f64;
    let total = idx.iter().map(|&i| y[i] - mean).sum::<f64>();
    let base = total * total / m as f64;
    let mut best: Option<SplitChoice> = None;

    for (feature, col) in columns.iter().enumerate() {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
        let mut prefix = 0.0;
        let mut candidate: Option<(usize, f64, f64)> = None;
        for s in 1..m {
            prefix += y[order[s - 1]] - mean;
            if s < min_leaf || m - s < min_leaf {
                continue;
            }
            let (lo, hi) = (col[order[s - 1]], col[order[s]]);
            if lo >= hi {
                continue;
            }
            let rest = total - prefix;
            let score = prefix * prefix / s as f64 + rest * rest / (m - s) as f64;
            let mut value = lo + 0.5 * (hi - lo);
            if value >= hi {
                value = lo;
            }
            // Strict improvement keeps the smallest split value on ties.
            if candidate.is_none_or(|(_, _, sc)| score > sc) {
                candidate = Some((s, value, score));
            }
        }
        if let Some((position, value, score)) = candidate {
            let better = match &best {
                None => true,
                Some(b) => score > b.score || (score == b.score && value < b.value),
            };
            if better {
                best = Some(SplitChoice { feature, value, position, score, order });
            }
        }
    }
    best.filter(|b| b.score > base)
}

fn build_tree(columns: &[Vec<f64>], y: &[f64], sample: Vec<usize>, config: &ForestConfig) -> Tree {
    let mut nodes = vec![Node::Leaf { indices: Vec::new() }];
    let mut stack = vec![(0usize, sample, 0usize)];
    while let Some((id, idx, depth)) = stack.pop() {
        let splittable = idx.len() >= 2 * config.min_leaf
            && config.max_depth.is_none_or(|d| depth < d)
            && idx.iter().any(|&i| y[i] != y[idx[0]]);
        let choice = if splittable { best_split(columns, y, &idx, config.min_leaf) } else { None };
        match choice {
            Some(c) => {
                let (left_idx, right_idx) = c.order.split_at(c.position);
                let (left, right) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf { indices: Vec::new() });
                nodes.push(Node::Leaf { indices: Vec::new() });
                nodes[id] = Node::Split { feature: c.feature, value: c.value, left, right };
                let mut l = left_idx.to_vec();
                let mut r = right_idx.to_vec();
                l.sort_unstable();
                r.sort_unstable();
                stack.push((right, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
            None => {
                nodes[id] = Node::Leaf { indices: idx };
            }
        }
    }
    Tree { nodes }
}

/// CART regression forest with leaf index lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<Tree>,
    /// Column-major training predictors.
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
    config: ForestConfig,
}

/// Fits a forest on a single predictor.
pub fn fit_forest(xstar: &[f64], ystar: &[f64], config: &ForestConfig) -> Result<ForestModel> {
    ForestModel::fit(vec![xstar.to_vec()], ystar.to_vec(), config)
}

impl ForestModel {
    /// Fits on column-major predictors. Trees are grown in parallel, each from
    /// its own stream derived from `(seed, tree index)`.
    pub fn fit(features: Vec<Vec<f64>>, targets: Vec<f64>, config: &ForestConfig) -> Result<Self> {
        config.validate()?;
        let n = targets.len();
        if features.is_empty() {
            return Err(Error::InvalidParameter("forest needs at least one predictor".into()));
        }
        if features.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidParameter("predictor columns differ in length from targets".into()));
        }
        if n < 2 * config.min_leaf {
            return Err(Error::InsufficientData { needed: 2 * config.min_leaf, got: n });
        }
        if features.iter().flatten().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Domain("forest inputs must be finite".into()));
        }
        let m = ((config.subsample_fraction * n as f64).floor() as usize).clamp(1, n);
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|b| {
                let mut rng = rng_from(config.seed, &[b as u64]);
                let mut sample = index::sample(&mut rng, n, m).into_vec();
                sample.sort_unstable();
                build_tree(&features, &targets, sample, config)
            })
            .collect();
        Ok(Self { trees, features, targets, config: config.clone() })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_train(&self) -> usize {
        self.targets.len()
    }

    pub fn feature(&self, j: usize) -> &[f64] {
        &self.features[j]
    }

    /// First predictor column; the Laplace-scale predictor for 1-D models.
    pub fn training_xstar(&self) -> &[f64] {
        &self.features[0]
    }

    pub fn training_ystar(&self) -> &[f64] {
        &self.targets
    }

    /// Non-zero localizing weights as `(index, weight)`, sorted by index.
    pub fn sparse_weights(&self, query: &[f64]) -> Vec<(usize, f64)> {
        let mut dense = vec![0.0; self.n_train()];
        self.accumulate(query, &mut dense);
        dense.into_iter().enumerate().filter(|(_, w)| *w > 0.0).collect()
    }

    /// Localizing weights over all training points; they sum to one.
    pub fn weights(&self, query: &[f64]) -> Vec<f64> {
        let mut dense = vec![0.0; self.n_train()];
        self.accumulate(query, &mut dense);
        dense
    }

    fn accumulate(&self, query: &[f64], dense: &mut [f64]) {
        let b = self.trees.len() as f64;
        for tree in &self.trees {
            let leaf = tree.leaf(query);
            let w = 1.0 / (b * leaf.len() as f64);
            for &i in leaf {
                dense[i] += w;
            }
        }
        let total: f64 = dense.iter().sum();
        dense.iter_mut().for_each(|w| *w /= total);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLinearFit {
    /// Local slope, in `[-1, 1]`.
    pub a_hat: f64,
    /// Level of the local line at the query.
    pub c_hat: f64,
}

/// `argmin_{a ∈ [-1,1], c} Σ w_i |y*_i - c - (x*_i - x*) a|`.
///
/// Solved in the uncentred form `Σ w_i |y*_i - d - a x*_i|` with
/// `c = d + a x*`, so the solution at two queries with equal weights differs
/// only through the query itself.
pub fn local_linear_median(xstar_query: f64, w: &[f64], xstar: &[f64], ystar: &[f64]) -> Result<LocalLinearFit> {
    let fit = l1::fit_line(xstar, ystar, w, -1.0, 1.0)?;
    Ok(LocalLinearFit { a_hat: fit.slope, c_hat: fit.intercept + fit.slope * xstar_query })
}

/// Random forest extrapolation on the Laplace scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfProgression {
    pub transform_x: MarginalTransform,
    pub transform_y: MarginalTransform,
    pub forest: ForestModel,
}

pub fn rf_progression_fit(x: &[f64], y: &[f64], k: usize, config: &ForestConfig) -> Result<RfProgression> {
    RfProgression::fit(x, y, k, config)
}

impl RfProgression {
    /// Full-sample marginals with `k` tail order statistics, then a forest on
    /// the transformed pairs.
    pub fn fit(x: &[f64], y: &[f64], k: usize, config: &ForestConfig) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidParameter("x and y differ in length".into()));
        }
        config.validate()?;
        let transform_x = fit_marginal(x, k)?;
        let transform_y = fit_marginal(y, k)?;
        let xstar: Vec<f64> = x.iter().map(|&v| transform_x.to_laplace(v)).collect();
        let ystar: Vec<f64> = y.iter().map(|&v| transform_y.to_laplace(v)).collect();
        let forest = ForestModel::fit(vec![xstar], ystar, config)?;
        Ok(Self { transform_x, transform_y, forest })
    }

    /// Local fit at an already transformed query.
    pub fn local_fit_star(&self, xstar: f64) -> LocalLinearFit {
        let sparse = self.forest.sparse_weights(&[xstar]);
        let xs: Vec<f64> = sparse.iter().map(|&(i, _)| self.forest.training_xstar()[i]).collect();
        let ys: Vec<f64> = sparse.iter().map(|&(i, _)| self.forest.training_ystar()[i]).collect();
        let ws: Vec<f64> = sparse.iter().map(|&(_, w)| w).collect();
        local_linear_median(xstar, &ws, &xs, &ys).unwrap_or_else(|_| LocalLinearFit {
            // All supporting points share one x*: fall back to a flat local fit.
            a_hat: 0.0,
            c_hat: l1::weighted_median(&ys, &ws),
        })
    }

    pub fn local_fit(&self, x: f64) -> LocalLinearFit {
        self.local_fit_star(self.transform_x.to_laplace(x))
    }

    /// Prediction on the Laplace scale of the response.
    pub fn predict_laplace(&self, x: f64) -> f64 {
        self.local_fit(x).c_hat
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.transform_y.from_laplace(self.predict_laplace(x))
    }

    /// Local slopes used for extrapolation below and above the training range.
    pub fn tail_slopes(&self) -> (f64, f64) {
        let xs = self.forest.training_xstar();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (self.local_fit_star(lo - 1.0).a_hat, self.local_fit_star(hi + 1.0).a_hat)
    }
}

impl Regressor1d for RfProgression {
    fn predict(&self, x: f64) -> f64 {
        RfProgression::predict(self, x)
    }
}

/// Forest on the original scale, used for the constant-extrapolation and
/// local-linear baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineForest {
    pub forest: ForestModel,
}

impl BaselineForest {
    /// Fits on row-major predictors.
    pub fn fit(rows: &[Vec<f64>], y: &[f64], config: &ForestConfig) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidParameter("ragged predictor rows".into()));
        }
        let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Ok(Self { forest: ForestModel::fit(columns, y.to_vec(), config)? })
    }

    pub fn fit_1d(x: &[f64], y: &[f64], config: &ForestConfig) -> Result<Self> {
        Ok(Self { forest: ForestModel::fit(vec![x.to_vec()], y.to_vec(), config)? })
    }

    /// `Σ w_i(x) y_i`.
    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        let y = self.forest.training_ystar();
        self.forest.sparse_weights(x).iter().map(|&(i, w)| w * y[i]).sum()
    }

    /// Weighted least squares `min Σ w_i (y_i - c - (x_i - x)ᵀ a)²`; returns `c`.
    pub fn predict_local_linear(&self, x: &[f64]) -> Result<f64> {
        let sparse = self.forest.sparse_weights(x);
        let y = self.forest.training_ystar();
        let p = self.forest.n_features();
        if p == 1 {
            let col = self.forest.feature(0);
            let xs: Vec<f64> = sparse.iter().map(|&(i, _)| col[i]).collect();
            let ys: Vec<f64> = sparse.iter().map(|&(i, _)| y[i]).collect();
            let ws: Vec<f64> = sparse.iter().map(|&(_, w)| w).collect();
            return weighted_local_line(x[0], &ws, &xs, &ys);
        }
        let mut gram = DMatrix::<f64>::zeros(p + 1, p + 1);
        let mut rhs = DVector::<f64>::zeros(p + 1);
        let mut z = DVector::<f64>::zeros(p + 1);
        for &(i, w) in &sparse {
            z[0] = 1.0;
            for j in 0..p {
                z[j + 1] = self.forest.feature(j)[i] - x[j];
            }
            gram.ger(w, &z, &z, 1.0);
            rhs.axpy(w * y[i], &z, 1.0);
        }
        for j in 1..=p {
            let mean = gram[(0, j)];
            if gram[(j, j)] - mean * mean <= 1e-12 * gram[(j, j)].abs().max(f64::MIN_POSITIVE) {
                return Err(Error::SingularDesign(format!("zero weighted variance in predictor {j}")));
            }
        }
        let chol = gram.cholesky().ok_or_else(|| Error::SingularDesign("weighted design is not positive definite".into()))?;
        Ok(chol.solve(&rhs)[0])
    }
}

/// Closed-form weighted least-squares line at `query`; returns its level there.
pub fn weighted_local_line(query: f64, w: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
    let total: f64 = w.iter().sum();
    let xm = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / total;
    let ym = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / total;
    let sxx = w.iter().zip(x).map(|(w, x)| w * (x - xm).powi(2)).sum::<f64>();
    let sxy = w.iter().zip(x).zip(y).map(|((w, x), y)| w * (x - xm) * (y - ym)).sum::<f64>();
    let scale = w.iter().zip(x).map(|(w, x)| w * x * x).sum::<f64>();
    if !(sxx > 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularDesign("weighted variance of x is zero".into()));
    }
    let slope = sxy / sxx;
    Ok(ym + slope * (query - xm))
}

pub fn rf_baseline_predict(model: &BaselineForest, x: &[f64]) -> f64 {
    model.predict_mean(x)
}

pub fn llf_baseline_predict(model: &BaselineForest, x: &[f64]) -> Result<f64> {
    model.predict_local_linear(x)
}
