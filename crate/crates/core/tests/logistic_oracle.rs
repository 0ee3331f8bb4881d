mod common;

use common::{sigmoid, Lcg};
use itemsel_core::estimators::{
    dimension_design, fit_dim_logistics, fit_logistic, penalized_log_likelihood, SubsetScores, ANCHOR_LEVEL, SLOPE_L2,
};
use itemsel_core::selection::{SelectionMethod, SubsetSelection};
use itemsel_core::ScaleVector;

/// Penalized log-likelihood computed independently of the crate.
fn oracle_ll(a: f64, b: f64, xs: &[f64], ys: &[f64], ws: &[f64]) -> f64 {
    let mut ll = 0.0;
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(ws) {
        let p = sigmoid(a + b * x).clamp(1e-300, 1.0 - 1e-16);
        ll += w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    }
    ll - 0.5 * SLOPE_L2 * b * b
}

/// Coarse grid followed by two successively finer grids around the best cell.
fn grid_mle(xs: &[f64], ys: &[f64], ws: &[f64]) -> (f64, f64, f64) {
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    let mut center = (0.0, 0.0);
    let mut half = (30.0, 10.0);
    for _ in 0..4 {
        let steps = 120;
        for i in 0..=steps {
            let a = center.0 - half.0 + 2.0 * half.0 * i as f64 / steps as f64;
            for j in 0..=steps {
                let b = center.1 - half.1 + 2.0 * half.1 * j as f64 / steps as f64;
                let ll = oracle_ll(a, b, xs, ys, ws);
                if ll > best.2 {
                    best = (a, b, ll);
                }
            }
        }
        center = (best.0, best.1);
        half = (half.0 / 20.0, half.1 / 20.0);
    }
    best
}

fn selection(k: usize) -> SubsetSelection {
    SubsetSelection {
        method: SelectionMethod::Kmeans,
        indices: (0..k).collect(),
        weights: vec![1.0 / k as f64; k],
        cluster_sizes: vec![1; k],
        seed: 0,
    }
}

fn fixture(seed: u64) -> (Vec<ScaleVector>, Vec<f64>) {
    let mut rng = Lcg::new(seed);
    let k = 4 + rng.below(12);
    let slope = rng.range(-2.0, 0.5);
    let icpt = rng.range(-1.0, 3.0);
    let scales: Vec<ScaleVector> = (0..k)
        .map(|i| {
            let lv: Vec<i64> = (0..16).map(|_| rng.below(6) as i64).collect();
            ScaleVector::new(format!("i{i}"), &lv).unwrap()
        })
        .collect();
    let ys = scales
        .iter()
        .map(|s| {
            let p = sigmoid(icpt + slope * s.level(0));
            if seed % 3 == 0 {
                // fractional scores
                (p * 4.0).round() / 4.0
            } else {
                f64::from(u8::from(rng.uniform() < p))
            }
        })
        .collect();
    (scales, ys)
}

#[test]
fn newton_fit_matches_grid_oracle_on_ten_fixtures() {
    for seed in 0..10u64 {
        let (scales, ys) = fixture(seed);
        let ss = SubsetScores::new(selection(scales.len()), ys.clone()).unwrap();
        let curves = fit_dim_logistics(&ss, &scales, &[0, 7]).unwrap();
        for c in &curves {
            let (xs, yv, ws) = dimension_design(&scales, &ys, c.dimension);
            assert_eq!(*xs.last().unwrap(), ANCHOR_LEVEL);
            let (_, _, grid_ll) = grid_mle(&xs, &yv, &ws);
            let fitted = oracle_ll(c.intercept, c.slope, &xs, &yv, &ws);
            assert!(fitted >= grid_ll - 1e-3, "seed {seed} dim {}: {fitted} < {grid_ll}", c.dimension);
            let own = penalized_log_likelihood(c.intercept, c.slope, &xs, &yv, &ws, SLOPE_L2);
            assert!((own - fitted).abs() < 1e-9);
        }
    }
}

#[test]
fn anchor_lowers_the_prediction_at_level_twenty() {
    for seed in 0..10u64 {
        let (scales, ys) = fixture(seed);
        let ss = SubsetScores::new(selection(scales.len()), ys.clone()).unwrap();
        for c in fit_dim_logistics(&ss, &scales, &(0..16).collect::<Vec<_>>()).unwrap() {
            let (xs, yv, ws) = dimension_design(&scales, &ys, c.dimension);
            let n = xs.len() - 1;
            if let Some((a, b)) = fit_logistic(&xs[..n], &yv[..n], &ws[..n], SLOPE_L2) {
                let free = sigmoid(a + b * ANCHOR_LEVEL);
                assert!(c.predict(ANCHOR_LEVEL) <= free + 1e-9, "seed {seed} dim {}", c.dimension);
            }
        }
    }
}

#[test]
fn anchor_holds_when_difficulty_rises_with_level() {
    let mut rng = Lcg::new(77);
    for _ in 0..10 {
        let k = 8 + rng.below(8);
        let scales: Vec<ScaleVector> = (0..k)
            .map(|i| {
                let l = rng.below(6) as i64;
                ScaleVector::new(format!("i{i}"), &[l; 16]).unwrap()
            })
            .collect();
        let ys: Vec<f64> = scales.iter().map(|s| sigmoid(2.0 - 1.0 * s.level(0))).collect();
        if !ys.iter().any(|&y| y > 0.5) {
            continue;
        }
        let ss = SubsetScores::new(selection(k), ys).unwrap();
        let c = fit_dim_logistics(&ss, &scales, &[0]).unwrap()[0];
        assert!(c.predict(ANCHOR_LEVEL) < 0.2);
    }
}

#[test]
fn all_correct_at_level_one() {
    let scales: Vec<ScaleVector> = (0..5).map(|i| ScaleVector::new(format!("i{i}"), &[1; 16]).unwrap()).collect();
    let ss = SubsetScores::new(selection(5), vec![1.0; 5]).unwrap();
    let c = fit_dim_logistics(&ss, &scales, &[3]).unwrap()[0];
    assert!(c.slope < 0.0);
    assert!(c.predict(1.0) > 0.9);
    assert!(c.predict(20.0) < 0.1);
    let (xs, ys, ws) = dimension_design(&scales, &[1.0; 5], 3);
    let (_, _, grid_ll) = grid_mle(&xs, &ys, &ws);
    assert!(oracle_ll(c.intercept, c.slope, &xs, &ys, &ws) >= grid_ll - 1e-3);
}

#[test]
fn level_independent_scores_give_a_gentle_slope() {
    let mut scales = Vec::new();
    for i in 0..10 {
        let l = if i % 2 == 0 { 0 } else { 5 };
        scales.push(ScaleVector::new(format!("i{i}"), &[l; 16]).unwrap());
    }
    let ss = SubsetScores::new(selection(10), vec![1.0; 10]).unwrap();
    let c = fit_dim_logistics(&ss, &scales, &[0]).unwrap()[0];
    assert!(c.slope.abs() <= 0.5 || c.predict(5.0) > 0.9, "slope {}", c.slope);
}

#[test]
fn single_item_is_rejected() {
    let scales = vec![ScaleVector::new("a", &[2; 16]).unwrap()];
    let ss = SubsetScores::new(selection(1), vec![1.0]).unwrap();
    assert!(fit_dim_logistics(&ss, &scales, &[0]).is_err());
}
