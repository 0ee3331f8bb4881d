//! Full-benchmark score estimators built on a scored subset.
//!
//! Two estimates are formed from the same subset scores. The first averages
//! them with cluster-size weights. The second fits one logistic curve per
//! retained demand dimension (level → success probability) and averages the
//! curves' predictions over every item. Each curve also gets a pseudo-observation
//! of failure at level [`ANCHOR_LEVEL`]. The final estimate blends the two by
//! `λ = b̂² / (b̂² + v̂)`: `b̂` is the regression estimate's in-sample bias and
//! `v̂` is the weighted estimate's variance.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datamodel::ScaleVector;
use crate::error::{Error, Result};
use crate::math::{self, bernoulli_ll, sigmoid};
use crate::selection::SubsetSelection;

/// Level of the failure pseudo-observation appended to every per-dimension fit.
pub const ANCHOR_LEVEL: f64 = 20.0;
pub const ANCHOR_WEIGHT: f64 = 1.0;
/// Ridge strength on the slope (the intercept is unpenalized).
pub const SLOPE_L2: f64 = 1e-3;
pub const NEWTON_TOL: f64 = 1e-8;
pub const NEWTON_MAX_ITERS: usize = 100;

/// A target model's observed scores on the selected items, in selection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScores {
    pub selection: SubsetSelection,
    pub scores: Vec<f64>,
}

impl SubsetScores {
    pub fn new(selection: SubsetSelection, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != selection.len() {
            return Err(Error::Shape(format!(
                "{} scores for {} selected items",
                scores.len(),
                selection.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidArgument(format!("subset score {s} outside [0, 1]")));
        }
        Ok(SubsetScores { selection, scores })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticCurve {
    pub dimension: usize,
    pub intercept: f64,
    pub slope: f64,
}

impl LogisticCurve {
    #[inline]
    pub fn predict(&self, level: f64) -> f64 {
        sigmoid(self.intercept + self.slope * level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub cluster_estimate: f64,
    pub logistic_estimate: f64,
    pub lambda: f64,
    pub bias_hat: f64,
    pub var_hat: f64,
    pub final_estimate: f64,
}

/// `Σ wᵢ yᵢ` over the selected items.
pub fn cluster_estimate(ss: &SubsetScores) -> f64 {
    ss.selection
        .weights
        .iter()
        .zip(&ss.scores)
        .map(|(w, y)| w * y)
        .sum()
}

/// Penalized log-likelihood maximized by [`fit_logistic`].
pub fn penalized_log_likelihood(intercept: f64, slope: f64, xs: &[f64], ys: &[f64], ws: &[f64], l2: f64) -> f64 {
    let ll: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((&x, &y), &w)| w * bernoulli_ll(y, intercept + slope * x))
        .sum();
    ll - 0.5 * l2 * slope * slope
}

/// Weighted Bernoulli logistic regression of `ys` on `xs` by damped Newton.
///
/// Returns `(intercept, slope)` or `None` when neither the gradient norm
/// (relative to the total weight) has dropped below [`NEWTON_TOL`] nor the
/// Newton decrement has reached rounding level within [`NEWTON_MAX_ITERS`]
/// iterations.
pub fn fit_logistic(xs: &[f64], ys: &[f64], ws: &[f64], l2: f64) -> Option<(f64, f64)> {
    let objective = |a: f64, b: f64| -penalized_log_likelihood(a, b, xs, ys, ws, l2);
    let tol = NEWTON_TOL * ws.iter().sum::<f64>().max(1.0);
    let (mut a, mut b) = (0.0, 0.0);
    let mut f = objective(a, b);
    for _ in 0..NEWTON_MAX_ITERS {
        let (mut ga, mut gb) = (0.0, l2 * b);
        let (mut haa, mut hab, mut hbb) = (0.0, 0.0, l2);
        for ((&x, &y), &w) in xs.iter().zip(ys).zip(ws) {
            let p = sigmoid(a + b * x);
            let r = w * (p - y);
            ga += r;
            gb += r * x;
            let v = w * p * (1.0 - p);
            haa += v;
            hab += v * x;
            hbb += v * x * x;
        }
        if math::sqrt(ga * ga + gb * gb) < tol {
            return Some((a, b));
        }
        let mut det = haa * hbb - hab * hab;
        let mut damp = 0.0;
        while !(det > 1e-14 * (haa * hbb).max(1e-300)) {
            damp = if damp == 0.0 { 1e-10 } else { damp * 10.0 };
            det = (haa + damp) * (hbb + damp) - hab * hab;
        }
        let da = ((hbb + damp) * ga - hab * gb) / det;
        let db = ((haa + damp) * gb - hab * ga) / det;
        if ga * da + gb * db <= 1e-15 * f.abs().max(1.0) {
            return Some((a, b));
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let (na, nb) = (a - step * da, b - step * db);
            let nf = objective(na, nb);
            if nf <= f {
                a = na;
                b = nb;
                f = nf;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (mut ga, mut gb) = (0.0, l2 * b);
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(ws) {
        let r = w * (sigmoid(a + b * x) - y);
        ga += r;
        gb += r * x;
    }
    (math::sqrt(ga * ga + gb * gb) < tol).then_some((a, b))
}

/// Builds the per-dimension regression data for `dim`: the selected items plus
/// the anchor pseudo-observation.
pub fn dimension_design(selected_scales: &[ScaleVector], scores: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut xs: Vec<f64> = selected_scales.iter().map(|s| s.level(dim)).collect();
    let mut ys = scores.to_vec();
    let mut ws = alloc::vec![1.0; xs.len()];
    xs.push(ANCHOR_LEVEL);
    ys.push(0.0);
    ws.push(ANCHOR_WEIGHT);
    (xs, ys, ws)
}

/// One anchored logistic curve per retained dimension.
///
/// `selected_scales` must be aligned with `ss.selection.indices`.
pub fn fit_dim_logistics(
    ss: &SubsetScores,
    selected_scales: &[ScaleVector],
    retained: &[usize],
) -> Result<Vec<LogisticCurve>> {
    if ss.scores.len() < 2 {
        return Err(Error::InvalidArgument("need at least two selected items".into()));
    }
    if selected_scales.len() != ss.scores.len() {
        return Err(Error::Shape(format!(
            "{} scale vectors for {} scores",
            selected_scales.len(),
            ss.scores.len()
        )));
    }
    retained
        .iter()
        .map(|&dim| {
            let (xs, ys, ws) = dimension_design(selected_scales, &ss.scores, dim);
            fit_logistic(&xs, &ys, &ws, SLOPE_L2)
                .map(|(intercept, slope)| LogisticCurve {
                    dimension: dim,
                    intercept,
                    slope,
                })
                .ok_or(Error::LogisticNonConvergence { dimension: dim })
        })
        .collect()
}

/// Mean over the curves of each curve's prediction at the item's level.
pub fn item_prediction(curves: &[LogisticCurve], scale: &ScaleVector) -> f64 {
    curves.iter().map(|c| c.predict(scale.level(c.dimension))).sum::<f64>() / curves.len() as f64
}

/// Average per-item prediction over every item, clamped to [0, 1].
pub fn logistic_estimate(curves: &[LogisticCurve], all_scales: &[ScaleVector]) -> f64 {
    let total: f64 = all_scales.iter().map(|s| item_prediction(curves, s)).sum();
    (total / all_scales.len() as f64).clamp(0.0, 1.0)
}

/// Like [`logistic_estimate`], but items that were actually scored contribute
/// their observed score instead of a prediction.
pub fn logistic_estimate_observed(curves: &[LogisticCurve], all_scales: &[ScaleVector], ss: &SubsetScores) -> f64 {
    let mut observed: Vec<Option<f64>> = alloc::vec![None; all_scales.len()];
    for (&i, &y) in ss.selection.indices.iter().zip(&ss.scores) {
        observed[i] = Some(y);
    }
    let total: f64 = all_scales
        .iter()
        .zip(&observed)
        .map(|(s, o)| o.unwrap_or_else(|| item_prediction(curves, s)))
        .sum();
    (total / all_scales.len() as f64).clamp(0.0, 1.0)
}

/// Blends the two estimates.
///
/// `b̂` is the mean residual `p̂ᵢ − yᵢ` of the regression on the selected
/// items. `v̂ = (Σ wᵢ²)·ȳ(1 − ȳ)` with `ȳ` the weighted mean score.
pub fn combine(cluster_est: f64, logistic_est: f64, ss: &SubsetScores, predicted_selected: &[f64]) -> EstimateReport {
    let k = ss.scores.len().max(1) as f64;
    let bias_hat = predicted_selected
        .iter()
        .zip(&ss.scores)
        .map(|(p, y)| p - y)
        .sum::<f64>()
        / k;
    let ybar = cluster_estimate(ss);
    let sum_w2: f64 = ss.selection.weights.iter().map(|w| w * w).sum();
    let var_hat = sum_w2 * ybar * (1.0 - ybar);
    blend(cluster_est, logistic_est, bias_hat, var_hat)
}

/// `λ = b̂² / (b̂² + v̂)` (zero when both vanish) and the convex blend.
pub fn blend(cluster_est: f64, logistic_est: f64, bias_hat: f64, var_hat: f64) -> EstimateReport {
    let b2 = bias_hat * bias_hat;
    let lambda = if b2 + var_hat > 0.0 {
        (b2 / (b2 + var_hat)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    EstimateReport {
        cluster_estimate: cluster_est,
        logistic_estimate: logistic_est,
        lambda,
        bias_hat,
        var_hat,
        final_estimate: lambda * cluster_est + (1.0 - lambda) * logistic_est,
    }
}

/// The full stack for one target model: weighted average, anchored
/// regressions, blend. `all_scales` is indexed like `ss.selection.indices`.
pub fn scales_pp_estimate(ss: &SubsetScores, all_scales: &[ScaleVector], retained: &[usize]) -> Result<EstimateReport> {
    let selected: Vec<ScaleVector> = ss
        .selection
        .indices
        .iter()
        .map(|&i| all_scales[i].clone())
        .collect();
    let curves = fit_dim_logistics(ss, &selected, retained)?;
    let predicted: Vec<f64> = selected.iter().map(|s| item_prediction(&curves, s)).collect();
    let logistic = logistic_estimate_observed(&curves, all_scales, ss);
    Ok(combine(cluster_estimate(ss), logistic, ss, &predicted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::SelectionMethod;
    use alloc::vec;

    fn selection(weights: Vec<f64>) -> SubsetSelection {
        let k = weights.len();
        SubsetSelection {
            method: SelectionMethod::Kmeans,
            indices: (0..k).collect(),
            weights,
            cluster_sizes: vec![1; k],
            seed: 0,
        }
    }

    #[test]
    fn cluster_estimate_examples() {
        let ss = SubsetScores::new(selection(vec![0.75, 0.25]), vec![1.0, 0.0]).unwrap();
        assert_eq!(cluster_estimate(&ss), 0.75);
        let ss = SubsetScores::new(selection(vec![0.1, 0.6, 0.3]), vec![0.4; 3]).unwrap();
        assert!((cluster_estimate(&ss) - 0.4).abs() < 1e-15);
        assert!(SubsetScores::new(selection(vec![1.0]), vec![1.2]).is_err());
    }

    #[test]
    fn blend_limits() {
        let r = blend(0.7, 0.4, 0.0, 0.02);
        assert_eq!(r.lambda, 0.0);
        assert_eq!(r.final_estimate, 0.4);
        let r = blend(0.7, 0.4, 0.3, 0.0);
        assert_eq!(r.lambda, 1.0);
        assert_eq!(r.final_estimate, 0.7);
        let r = blend(0.7, 0.4, 0.1, 0.01);
        assert!((r.lambda - 0.5).abs() < 1e-15);
        assert_eq!(blend(0.7, 0.4, 0.0, 0.0).lambda, 0.0);
    }

    #[test]
    fn flat_and_symmetric_curves() {
        let logit06 = math::ln(0.6 / 0.4);
        let curves: Vec<_> = (0..16)
            .map(|d| LogisticCurve { dimension: d, intercept: logit06, slope: 0.0 })
            .collect();
        let scales: Vec<_> = (0..4)
            .map(|i| ScaleVector::new(alloc::format!("i{i}"), &[i as i64; 16]).unwrap())
            .collect();
        assert!((logistic_estimate(&curves, &scales) - 0.6).abs() < 1e-12);

        let steep = [LogisticCurve { dimension: 2, intercept: 50.0, slope: -20.0 }];
        let mut lv = [0i64; 16];
        let low = ScaleVector::new("a", &lv).unwrap();
        lv[2] = 5;
        let high = ScaleVector::new("b", &lv).unwrap();
        let est = logistic_estimate(&steep, &[low.clone(), high.clone(), low, high]);
        assert!((est - 0.5).abs() < 1e-12);
    }

    #[test]
    fn anchor_makes_single_level_fit_defined() {
        let scales = vec![ScaleVector::new("a", &[2; 16]).unwrap(); 3];
        let ss = SubsetScores::new(selection(vec![1.0 / 3.0; 3]), vec![1.0, 0.0, 1.0]).unwrap();
        let curves = fit_dim_logistics(&ss, &scales, &[0, 5]).unwrap();
        assert_eq!(curves.len(), 2);
        assert!(curves.iter().all(|c| c.slope < 0.0 && c.intercept.is_finite()));
    }
}
