//! Weighted least-absolute-deviation line fits with a bounded slope.
//!
//! Minimizes `Σ w_i |y_i - d - a x_i|` over `a ∈ [lo, hi]`, `d ∈ ℝ`. For a
//! fixed slope the optimal intercept is a weighted median of `y_i - a x_i`,
//! so the profile objective `g(a) = min_d (...)` is convex in `a` and is
//! minimized by golden-section search.

use crate::error::{Error, Result};

const GOLDEN_TOL: f64 = 1e-10;
const GOLDEN_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub objective: f64,
}

/// Lower weighted median: the smallest value whose cumulative weight reaches
/// half the total. Entries with non-positive weight are ignored.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut pairs: Vec<(f64, f64)> =
        values.iter().zip(weights).filter(|(_, &w)| w > 0.0).map(|(&v, &w)| (v, w)).collect();
    weighted_median_in_place(&mut pairs)
}

fn weighted_median_in_place(pairs: &mut [(f64, f64)]) -> f64 {
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let half = 0.5 * total * (1.0 - 1e-12);
    let mut cum = 0.0;
    for &(v, w) in pairs.iter() {
        cum += w;
        if cum >= half {
            return v;
        }
    }
    pairs[pairs.len() - 1].0
}

pub fn objective(x: &[f64], y: &[f64], w: &[f64], slope: f64, intercept: f64) -> f64 {
    x.iter().zip(y).zip(w).map(|((&xi, &yi), &wi)| wi * (yi - intercept - slope * xi).abs()).sum()
}

struct Profile<'a> {
    x: &'a [f64],
    y: &'a [f64],
    w: &'a [f64],
    buf: Vec<(f64, f64)>,
}

impl Profile<'_> {
    /// Optimal intercept and objective for a fixed slope.
    fn eval(&mut self, slope: f64) -> (f64, f64) {
        self.buf.clear();
        self.buf.extend(self.x.iter().zip(self.y).zip(self.w).map(|((&xi, &yi), &wi)| (yi - slope * xi, wi)));
        let d = weighted_median_in_place(&mut self.buf);
        (d, self.buf.iter().map(|&(r, w)| w * (r - d).abs()).sum())
    }
}

/// Fits the bounded-slope weighted L1 line. Requires at least two distinct
/// `x` values among the positively weighted points.
pub fn fit_line(x: &[f64], y: &[f64], w: &[f64], lo: f64, hi: f64) -> Result<LineFit> {
    assert!(x.len() == y.len() && x.len() == w.len(), "length mismatch");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        if wi > 0.0 {
            xs.push(xi);
            ys.push(yi);
            ws.push(wi);
        }
    }
    let Some(&first) = xs.first() else {
        return Err(Error::DegenerateData("no positively weighted points".into()));
    };
    if xs.iter().all(|&v| v == first) {
        return Err(Error::DegenerateData("all positively weighted x values are equal".into()));
    }

    let mut profile = Profile { x: &xs, y: &ys, w: &ws, buf: Vec::with_capacity(xs.len()) };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = profile.eval(c).1;
    let mut fd = profile.eval(d).1;
    for _ in 0..GOLDEN_MAX_ITER {
        if b - a < GOLDEN_TOL {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = profile.eval(c).1;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = profile.eval(d).1;
        }
    }

    let mut best = LineFit { slope: f64::NAN, intercept: f64::NAN, objective: f64::INFINITY };
    for slope in [0.5 * (a + b), lo, hi] {
        let (intercept, obj) = profile.eval(slope);
        if obj < best.objective {
            best = LineFit { slope, intercept, objective: obj };
        }
    }
    Ok(best)
}
