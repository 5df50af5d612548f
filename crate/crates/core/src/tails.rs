//! Univariate tail machinery.
//!
//! Threshold exceedances are modelled by the generalized Pareto distribution
//!
//! ```text
//! H(y) = 1 - (1 + γ y / σ)^(-1/γ)     γ > 0
//! H(y) = 1 - exp(-y / σ)              γ = 0
//! ```
//!
//! with `σ > 0` and the shape restricted to `γ ≥ 0`. A [`MarginalTransform`]
//! combines the empirical distribution function on `(l, u]` with GPD tails
//! below `l = Y_(k)` and above `u = Y_(n-k)`, and maps values to and from the
//! standard Laplace scale.
//!
//! Tail branches are evaluated through log-survival probabilities so that
//! Laplace-scale values stay finite and invertible far beyond the point where
//! `cdf` itself rounds to 0 or 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this shape the exponential limit is used.
const GAMMA_ZERO: f64 = 1e-8;

/// Fewest exceedances accepted by [`fit_gpd`].
pub const MIN_EXCEEDANCES: usize = 8;

/// Smallest `k` accepted by [`fit_marginal`]. The lower tail uses the `k - 1`
/// observations strictly below `Y_(k)`, which must meet [`MIN_EXCEEDANCES`].
pub const MIN_K: usize = MIN_EXCEEDANCES + 1;

const NM_MAX_ITER: usize = 500;
const NM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub sigma: f64,
    pub gamma: f64,
}

impl GpdParams {
    pub fn new(sigma: f64, gamma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("GPD scale must be positive, got {sigma}")));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!("GPD shape must be non-negative, got {gamma}")));
        }
        Ok(Self { sigma, gamma })
    }

    fn is_exponential(&self) -> bool {
        self.gamma < GAMMA_ZERO
    }

    /// `ln(1 - H(y))` for `y ≥ 0`.
    pub fn log_survival(&self, y: f64) -> f64 {
        if self.is_exponential() {
            -y / self.sigma
        } else {
            -(self.gamma * y / self.sigma).ln_1p() / self.gamma
        }
    }

    /// Inverse of `-log_survival`: the `y` with `-ln(1 - H(y)) = neg_log_surv`.
    pub fn from_neg_log_survival(&self, neg_log_surv: f64) -> f64 {
        if self.is_exponential() {
            self.sigma * neg_log_surv
        } else {
            self.sigma / self.gamma * (self.gamma * neg_log_surv).exp_m1()
        }
    }

    /// Log-likelihood of a sample of exceedances.
    pub fn log_likelihood(&self, exceedances: &[f64]) -> f64 {
        let n = exceedances.len() as f64;
        if self.is_exponential() {
            -n * self.sigma.ln() - exceedances.iter().sum::<f64>() / self.sigma
        } else {
            let g = self.gamma;
            let s = exceedances.iter().map(|&y| (g * y / self.sigma).ln_1p()).sum::<f64>();
            -n * self.sigma.ln() - (1.0 + 1.0 / g) * s
        }
    }
}

/// GPD distribution function at `x ≥ 0`.
pub fn gpd_cdf(x: f64, params: &GpdParams) -> Result<f64> {
    GpdParams::new(params.sigma, params.gamma)?;
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("GPD cdf requires x >= 0, got {x}")));
    }
    Ok(-params.log_survival(x).exp_m1())
}

/// GPD quantile function on `[0, 1)`.
pub fn gpd_quantile(p: f64, params: &GpdParams) -> Result<f64> {
    GpdParams::new(params.sigma, params.gamma)?;
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("GPD quantile requires 0 <= p < 1, got {p}")));
    }
    Ok(params.from_neg_log_survival(-(-p).ln_1p()))
}

fn moment_start(exceedances: &[f64]) -> GpdParams {
    let m = crate::stats::mean(exceedances);
    let v = exceedances.iter().map(|y| (y - m).powi(2)).sum::<f64>() / exceedances.len() as f64;
    let ratio = m * m / v;
    let gamma = 0.5 * (1.0 - ratio);
    if gamma > 0.0 {
        GpdParams { sigma: 0.5 * m * (ratio + 1.0), gamma }
    } else {
        GpdParams { sigma: m, gamma: 0.0 }
    }
}

/// Probability-weighted-moment estimates (Hosking and Wallis), clamped to
/// `γ ≥ 0`.
fn pwm_start(sorted: &[f64]) -> GpdParams {
    let n = sorted.len() as f64;
    let a0 = crate::stats::mean(sorted);
    let a1 = sorted
        .iter()
        .enumerate()
        .map(|(i, &y)| (1.0 - (i as f64 + 0.65) / n) * y)
        .sum::<f64>()
        / n;
    let denom = a0 - 2.0 * a1;
    if denom > 0.0 {
        let gamma = 2.0 - a0 / denom;
        let sigma = 2.0 * a0 * a1 / denom;
        if gamma > 0.0 && sigma > 0.0 {
            return GpdParams { sigma, gamma };
        }
    }
    GpdParams { sigma: a0, gamma: 0.0 }
}

/// Constrained maximum-likelihood fit over `σ > 0, γ ≥ 0`.
///
/// Nelder-Mead on `(ln σ, γ)` with the shape reflected at zero, started from
/// the better of the moment and probability-weighted-moment estimates. The
/// exponential fit `σ = mean` is the exact boundary optimum and is returned
/// whenever it beats the simplex result.
pub fn fit_gpd(exceedances: &[f64]) -> Result<GpdParams> {
    if exceedances.len() < MIN_EXCEEDANCES {
        return Err(Error::InsufficientData { needed: MIN_EXCEEDANCES, got: exceedances.len() });
    }
    if let Some(bad) = exceedances.iter().find(|y| !(y.is_finite() && **y > 0.0)) {
        return Err(Error::Domain(format!("exceedances must be finite and positive, got {bad}")));
    }
    let mut sorted = exceedances.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateData("all exceedances are equal".into()));
    }

    let nll = |theta: [f64; 2]| -> f64 {
        let p = GpdParams { sigma: theta[0].exp(), gamma: theta[1].abs() };
        let ll = p.log_likelihood(&sorted);
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };

    let candidates = [moment_start(&sorted), pwm_start(&sorted)];
    let start = candidates
        .iter()
        .copied()
        .max_by(|a, b| a.log_likelihood(&sorted).total_cmp(&b.log_likelihood(&sorted)))
        .unwrap();
    let theta = nelder_mead(nll, [start.sigma.ln(), start.gamma]);
    let simplex_fit = newton_polish(GpdParams { sigma: theta[0].exp(), gamma: theta[1].abs() }, &sorted);

    let boundary_fit = GpdParams { sigma: crate::stats::mean(&sorted), gamma: 0.0 };
    let best = [simplex_fit, boundary_fit, start]
        .into_iter()
        .max_by(|a, b| a.log_likelihood(&sorted).total_cmp(&b.log_likelihood(&sorted)))
        .unwrap();
    Ok(if best.gamma < GAMMA_ZERO { boundary_fit } else { best })
}

/// Newton iterations on the score equations from an interior simplex optimum.
/// The simplex locates the maximum only up to the flatness of the
/// likelihood surface; the score pins it down to rounding level, so nearly
/// identical samples get nearly identical estimates.
fn newton_polish(p: GpdParams, y: &[f64]) -> GpdParams {
    if p.gamma < GAMMA_ZERO {
        return p;
    }
    let k = y.len() as f64;
    let mut cur = p;
    let mut ll = cur.log_likelihood(y);
    for _ in 0..50 {
        let (sigma, gamma) = (cur.sigma, cur.gamma);
        let (mut a, mut b, mut c, mut l) = (0.0, 0.0, 0.0, 0.0);
        for &v in y {
            let u = v / sigma;
            let s = 1.0 + gamma * u;
            a += u / s;
            b += u * u / (s * s);
            c += u / (s * s);
            l += (gamma * u).ln_1p();
        }
        let g = [-k / sigma + (1.0 + gamma) / sigma * a, l / (gamma * gamma) - (1.0 + 1.0 / gamma) * a];
        let h_ss = k / (sigma * sigma) - (1.0 + gamma) / (sigma * sigma) * (a + c);
        let h_sg = (a - (1.0 + gamma) * b) / sigma;
        let h_gg = -2.0 * l / gamma.powi(3) + 2.0 * a / (gamma * gamma) + (1.0 + 1.0 / gamma) * b;
        let det = h_ss * h_gg - h_sg * h_sg;
        if !(h_ss < 0.0 && det > 0.0) {
            break;
        }
        let step = [-(h_gg * g[0] - h_sg * g[1]) / det, -(h_ss * g[1] - h_sg * g[0]) / det];
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let next = GpdParams { sigma: sigma + t * step[0], gamma: gamma + t * step[1] };
            if next.sigma > 0.0 && next.gamma >= GAMMA_ZERO {
                let next_ll = next.log_likelihood(y);
                if next_ll.is_finite() && next_ll >= ll - 1e-12 * ll.abs() {
                    accepted = Some((next, next_ll));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, next_ll)) = accepted else { break };
        let done = (next.sigma - sigma).abs() <= 1e-15 * sigma && (next.gamma - gamma).abs() <= 1e-15 * gamma.max(1.0);
        cur = next;
        ll = next_ll;
        if done {
            break;
        }
    }
    cur
}

fn nelder_mead(f: impl Fn([f64; 2]) -> f64, start: [f64; 2]) -> [f64; 2] {
    let step = [0.1, 0.1];
    let mut simplex = [start, [start[0] + step[0], start[1]], [start[0], start[1] + step[1]]];
    let mut values = simplex.map(&f);

    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];

    for _ in 0..NM_MAX_ITER {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);

        let diameter = simplex[1..]
            .iter()
            .map(|v| (v[0] - simplex[0][0]).hypot(v[1] - simplex[0][1]))
            .fold(0.0, f64::max);
        if diameter < NM_TOL {
            break;
        }

        let centroid = lerp(simplex[0], simplex[1], 0.5);
        let worst = simplex[2];
        let reflected = lerp(centroid, worst, -1.0);
        let fr = f(reflected);

        if fr < values[0] {
            let expanded = lerp(centroid, worst, -2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let (contracted, fc) = if fr < values[2] {
                let c = lerp(centroid, reflected, 0.5);
                (c, f(c))
            } else {
                let c = lerp(centroid, worst, 0.5);
                (c, f(c))
            };
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = lerp(simplex[0], simplex[i], 0.5);
                    values[i] = f(simplex[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
    simplex[best]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailSide {
    Lower,
    Upper,
}

/// GPD fit for one tail of a sample together with its threshold metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub side: TailSide,
    /// `Y_(k)` for the lower tail, `Y_(n-k)` for the upper tail.
    pub threshold: f64,
    pub k: usize,
    pub n: usize,
    pub params: GpdParams,
    /// `1 - k/n`.
    pub tau0: f64,
}

impl TailFit {
    /// Probability mass `k/n` carried by the tail.
    pub fn tail_mass(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    /// `ln(k/(n/2))`, the Laplace-scale offset of the threshold.
    fn log_two_mass(&self) -> f64 {
        (2.0 * self.tail_mass()).ln()
    }
}

/// Semi-parametric distribution function with GPD tails and an empirical bulk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTransform {
    sorted_sample: Vec<f64>,
    lower: TailFit,
    upper: TailFit,
}

/// Fits the semi-parametric marginal with `k` order statistics in each tail.
///
/// Requires `MIN_K <= k < n/4`. Exceedances are strict: `Y_i > u` gives
/// `Y_i - u` for the upper tail and `Y_i < l` gives `l - Y_i` for the lower.
pub fn fit_marginal(sample: &[f64], k: usize) -> Result<MarginalTransform> {
    let n = sample.len();
    if k < MIN_K {
        return Err(Error::InvalidParameter(format!("k must be at least {MIN_K}, got {k}")));
    }
    if 4 * k >= n {
        return Err(Error::InvalidParameter(format!("k must be below n/4 (k = {k}, n = {n})")));
    }
    if let Some(bad) = sample.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("sample contains a non-finite value {bad}")));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);

    let l = sorted[k - 1];
    let u = sorted[n - k - 1];
    let upper_exc: Vec<f64> = sorted.iter().filter(|&&v| v > u).map(|&v| v - u).collect();
    let lower_exc: Vec<f64> = sorted.iter().filter(|&&v| v < l).map(|&v| l - v).collect();

    let tau0 = 1.0 - k as f64 / n as f64;
    let lower = TailFit { side: TailSide::Lower, threshold: l, k, n, params: fit_gpd(&lower_exc)?, tau0 };
    let upper = TailFit { side: TailSide::Upper, threshold: u, k, n, params: fit_gpd(&upper_exc)?, tau0 };
    Ok(MarginalTransform { sorted_sample: sorted, lower, upper })
}

impl MarginalTransform {
    pub fn fit(sample: &[f64], k: usize) -> Result<Self> {
        fit_marginal(sample, k)
    }

    pub fn sorted_sample(&self) -> &[f64] {
        &self.sorted_sample
    }

    pub fn lower(&self) -> &TailFit {
        &self.lower
    }

    pub fn upper(&self) -> &TailFit {
        &self.upper
    }

    pub fn n(&self) -> usize {
        self.sorted_sample.len()
    }

    /// Checks the structural invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let bad = |msg: &str| Err(Error::ModelFormat(format!("marginal transform: {msg}")));
        if self.lower.n != n || self.upper.n != n || self.lower.k != self.upper.k {
            return bad("tail metadata does not match the sample");
        }
        let k = self.lower.k;
        if k < MIN_K || 4 * k >= n {
            return bad("k out of range");
        }
        if self.sorted_sample.windows(2).any(|w| !(w[0] <= w[1])) {
            return bad("sample is not sorted");
        }
        if self.lower.threshold != self.sorted_sample[k - 1] || self.upper.threshold != self.sorted_sample[n - k - 1]
        {
            return bad("thresholds are not the stated order statistics");
        }
        GpdParams::new(self.lower.params.sigma, self.lower.params.gamma)?;
        GpdParams::new(self.upper.params.sigma, self.upper.params.gamma)?;
        Ok(())
    }

    fn empirical_cdf(&self, x: f64) -> f64 {
        self.sorted_sample.partition_point(|&v| v <= x) as f64 / self.n() as f64
    }

    /// Generalized inverse of the empirical distribution, restricted to
    /// `[Y_(k), Y_(n-k)]`.
    fn empirical_quantile(&self, p: f64) -> f64 {
        let n = self.n();
        let k = self.lower.k;
        let m = n as f64 * p;
        let r = m.round();
        let rank = if (m - r).abs() <= 1e-9 * (n as f64) { r } else { m.ceil() };
        let idx = (rank as usize).clamp(k, n - k) - 1;
        self.sorted_sample[idx]
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x > self.upper.threshold {
            1.0 - self.upper.tail_mass() * self.upper.params.log_survival(x - self.upper.threshold).exp()
        } else if x <= self.lower.threshold {
            self.lower.tail_mass() * self.lower.params.log_survival(self.lower.threshold - x).exp()
        } else {
            self.empirical_cdf(x)
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile requires 0 < p < 1, got {p}")));
        }
        let mass = self.upper.tail_mass();
        Ok(if p > self.upper.tau0 {
            let nls = -((1.0 - p) / mass).ln();
            self.upper.threshold + self.upper.params.from_neg_log_survival(nls)
        } else if p < mass {
            let nls = -(p / mass).ln();
            self.lower.threshold - self.lower.params.from_neg_log_survival(nls)
        } else {
            self.empirical_quantile(p)
        })
    }

    /// `Q_L(cdf(x))`, evaluated in log space in the tails.
    pub fn to_laplace(&self, x: f64) -> f64 {
        if x > self.upper.threshold {
            -self.upper.log_two_mass() - self.upper.params.log_survival(x - self.upper.threshold)
        } else if x <= self.lower.threshold {
            self.lower.log_two_mass() + self.lower.params.log_survival(self.lower.threshold - x)
        } else {
            laplace_quantile(self.empirical_cdf(x))
        }
    }

    /// `quantile(F_L(z))`, evaluated in log space in the tails.
    pub fn from_laplace(&self, z: f64) -> f64 {
        let mass = self.upper.tail_mass();
        if z >= 0.0 {
            let surv = 0.5 * (-z).exp();
            if surv < mass {
                let nls = z + self.upper.log_two_mass();
                return self.upper.threshold + self.upper.params.from_neg_log_survival(nls);
            }
            self.empirical_quantile(1.0 - surv)
        } else {
            let p = 0.5 * z.exp();
            if p < mass {
                let nls = -z + self.lower.log_two_mass();
                return self.lower.threshold - self.lower.params.from_neg_log_survival(nls);
            }
            self.empirical_quantile(p)
        }
    }
}

/// Standard Laplace distribution function.
pub fn laplace_cdf(x: f64) -> f64 {
    if x < 0.0 {
        0.5 * x.exp()
    } else {
        1.0 - 0.5 * (-x).exp()
    }
}

/// Standard Laplace quantile function.
pub fn laplace_quantile(p: f64) -> f64 {
    if p < 0.5 {
        (2.0 * p).ln()
    } else {
        -(2.0 * (1.0 - p)).ln()
    }
}
