//! Small descriptive statistics and the one-sample Kolmogorov-Smirnov test.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with denominator `n - 1`.
pub fn sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Lower empirical median, `x_(ceil(n/2))`.
pub fn lower_median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v[v.len().div_ceil(2) - 1]
}

/// `sup_x |F_n(x) - F(x)|` for the empirical distribution of `sample`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let above = (i + 1) as f64 / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Critical value of the one-sample KS statistic at level `alpha`, using the
/// asymptotic Kolmogorov quantile with Stephens' finite-sample correction.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    let rn = (n as f64).sqrt();
    c / (rn + 0.12 + 0.11 / rn)
}

pub fn ks_passes(sample: &[f64], cdf: impl Fn(f64) -> f64, alpha: f64) -> bool {
    ks_statistic(sample, cdf) <= ks_critical_value(sample.len(), alpha)
}
