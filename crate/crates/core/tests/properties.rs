use proptest::prelude::*;

use progression::forest::{fit_forest, local_linear_median, ForestConfig};
use progression::l1;
use progression::parametric::{fit_tail_line, tail_line_objective};
use progression::simbench::evaluate;
use progression::tails::{fit_marginal, gpd_cdf, gpd_quantile, laplace_cdf, laplace_quantile, GpdParams};

fn params() -> impl Strategy<Value = GpdParams> {
    (0.05f64..20.0, prop_oneof![Just(0.0), 0.0f64..2.0]).prop_map(|(s, g)| GpdParams::new(s, g).unwrap())
}

/// Exact minimum over lines with slope in `[-1, 1]`; an optimum passes
/// through two points or through one point at a slope bound.
fn vertex_oracle(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    let mut probe = |a: f64, d: f64| best = best.min(l1::objective(x, y, w, a, d));
    for i in 0..x.len() {
        probe(-1.0, y[i] + x[i]);
        probe(1.0, y[i] - x[i]);
        for j in i + 1..x.len() {
            if x[i] != x[j] {
                let a = (y[j] - y[i]) / (x[j] - x[i]);
                if (-1.0..=1.0).contains(&a) {
                    probe(a, y[i] - a * x[i]);
                }
            }
        }
    }
    best
}

fn points(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(0.01f64..1.0, n),
        )
    })
}

proptest! {
    #[test]
    fn gpd_quantile_inverts_cdf(p in params(), u in 0.0f64..0.999) {
        let x = gpd_quantile(u, &p).unwrap();
        prop_assert!(x >= 0.0);
        prop_assert!((gpd_cdf(x, &p).unwrap() - u).abs() <= 1e-9);
    }

    #[test]
    fn gpd_cdf_is_monotone(p in params(), a in 0.0f64..50.0, b in 0.0f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(gpd_cdf(lo, &p).unwrap() <= gpd_cdf(hi, &p).unwrap());
    }

    #[test]
    fn laplace_pair_round_trips(z in -30.0f64..30.0) {
        // Above zero the cdf is stored as 1 - e^(-z)/2, which keeps only
        // about 1e-16 absolute precision.
        let tol = 1e-12 * (1.0 + z.abs()) + if z > 0.0 { 1e-15 * z.exp() } else { 0.0 };
        prop_assert!((laplace_quantile(laplace_cdf(z)) - z).abs() <= tol);
    }

    #[test]
    fn marginal_transform_is_monotone_and_invertible(
        sample in prop::collection::vec(-100.0f64..100.0, 60..200),
        a in -500.0f64..500.0,
        b in -500.0f64..500.0,
    ) {
        let t = match fit_marginal(&sample, 12) {
            Ok(t) => t,
            Err(_) => return Ok(()),
        };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(t.to_laplace(lo) <= t.to_laplace(hi));
        prop_assert!(t.cdf(lo) <= t.cdf(hi));
        let (l, u) = (t.lower().threshold, t.upper().threshold);
        for v in [lo, hi] {
            if v < l || v > u {
                let back = t.from_laplace(t.to_laplace(v));
                prop_assert!((back - v).abs() <= 1e-7 * (1.0 + v.abs()), "{} vs {}", back, v);
            }
        }
    }

    #[test]
    fn weighted_median_minimizes_absolute_loss((v, _, w) in points(1..=25), probe in -6.0f64..6.0) {
        let m = l1::weighted_median(&v, &w);
        let loss = |c: f64| v.iter().zip(&w).map(|(v, w)| w * (v - c).abs()).sum::<f64>();
        prop_assert!(loss(m) <= loss(probe) + 1e-9);
        prop_assert!(v.contains(&m));
    }

    #[test]
    fn line_fit_is_optimal((x, y, w) in points(2..=14)) {
        prop_assume!(x.iter().any(|&v| v != x[0]));
        let fit = l1::fit_line(&x, &y, &w, -1.0, 1.0).unwrap();
        prop_assert!((-1.0..=1.0).contains(&fit.slope));
        prop_assert!((fit.objective - vertex_oracle(&x, &y, &w)).abs() <= 1e-6);
    }

    #[test]
    fn local_fit_is_optimal_at_any_query((x, y, w) in points(2..=12), q in -10.0f64..10.0) {
        prop_assume!(x.iter().any(|&v| v != x[0]));
        let fit = local_linear_median(q, &w, &x, &y).unwrap();
        let obj = l1::objective(&x, &y, &w, fit.a_hat, fit.c_hat - fit.a_hat * q);
        prop_assert!((-1.0..=1.0).contains(&fit.a_hat));
        prop_assert!(obj <= vertex_oracle(&x, &y, &w) + 1e-6);
    }

    #[test]
    fn tail_line_objective_beats_probes(
        (x, y, _) in points(8..=30),
        a in -1.0f64..1.0,
        b in -5.0f64..5.0,
    ) {
        let x: Vec<f64> = x.iter().map(|v| v.abs() + 1.0).collect();
        let p = fit_tail_line(&x, &y, 0.5).unwrap();
        let probe = progression::parametric::ProgressionParams::new(a, 0.0, b).unwrap();
        prop_assert!(tail_line_objective(&x, &y, 0.5, &p) <= tail_line_objective(&x, &y, 0.5, &probe) + 1e-9);
    }

    #[test]
    fn forest_weights_form_a_distribution(
        (x, y, _) in points(20..=80),
        q in -8.0f64..8.0,
        seed in 0u64..1000,
    ) {
        let cfg = ForestConfig { n_trees: 15, min_leaf: 3, seed, ..ForestConfig::default() };
        let forest = fit_forest(&x, &y, &cfg).unwrap();
        let w = forest.weights(&[q]);
        prop_assert_eq!(w.len(), x.len());
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn rmse_matches_brute_force(
        (p, y, m) in points(1..=40),
    ) {
        let metrics = evaluate(&p, &y, &m);
        let brute = (p.iter().zip(&y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / p.len() as f64).sqrt();
        prop_assert!((metrics.rmse - brute).abs() <= 1e-12);
    }
}
