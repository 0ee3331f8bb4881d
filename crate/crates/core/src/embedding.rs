//! From 16 demand levels to a low-dimensional space fit for clustering.
//!
//! Constant dimensions are dropped, the rest are z-scored and then reduced
//! either by PCA (deterministic, default) or by a seeded UMAP-style neighbor
//! embedding.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ScaleVector, N_DIMS};
use crate::error::{Error, Result};
use crate::math::{self, sq_dist, symmetric_eigen, Matrix};
use crate::rng;

pub const DEFAULT_TARGET_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    #[default]
    Pca,
    NeighborEmbed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborEmbedParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub epochs: usize,
    pub negative_rate: usize,
    pub learning_rate: f64,
}

impl Default for NeighborEmbedParams {
    fn default() -> Self {
        NeighborEmbedParams {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            epochs: 200,
            negative_rate: 5,
            learning_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpace {
    pub item_ids: Vec<String>,
    pub retained_dims: Vec<usize>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub coords: Matrix,
    pub reducer: Reducer,
    pub seed: u64,
}

/// Indices of dimensions whose levels vary across items.
pub fn filter_constant_dims(scales: &[ScaleVector]) -> Result<Vec<usize>> {
    if scales.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two items to measure variation, got {}",
            scales.len()
        )));
    }
    let first = &scales[0].levels;
    let retained: Vec<usize> = (0..N_DIMS)
        .filter(|&d| scales.iter().any(|s| s.levels[d] != first[d]))
        .collect();
    if retained.is_empty() {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(retained)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub matrix: Matrix,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Z-scores the retained columns with the sample (n − 1) standard deviation.
///
/// Panics if a retained column is constant.
pub fn standardize(scales: &[ScaleVector], retained: &[usize]) -> Standardized {
    let rows: Vec<Vec<f64>> = scales
        .iter()
        .map(|s| retained.iter().map(|&d| s.level(d)).collect())
        .collect();
    let raw = Matrix::from_rows(&rows).unwrap_or_else(|| Matrix::zeros(0, retained.len()));
    standardize_matrix(&raw)
}

pub fn standardize_matrix(raw: &Matrix) -> Standardized {
    let n = raw.rows();
    let mut matrix = raw.clone();
    let mut means = Vec::with_capacity(raw.cols());
    let mut stds = Vec::with_capacity(raw.cols());
    for j in 0..raw.cols() {
        let col = raw.column(j);
        let m = math::mean(&col);
        let s = math::sample_std(&col);
        assert!(s > 0.0, "column {j} is constant and cannot be standardized");
        for i in 0..n {
            matrix[(i, j)] = (raw[(i, j)] - m) / s;
        }
        means.push(m);
        stds.push(s);
    }
    Standardized { matrix, means, stds }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub coords: Matrix,
    /// Columns are the principal axes.
    pub components: Matrix,
    /// All eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
}

/// Exact PCA of centered data via the sample covariance.
///
/// Each axis is oriented so that its largest-magnitude loading is positive.
pub fn pca(x: &Matrix, r: usize) -> Result<PcaResult> {
    let (n, d) = (x.rows(), x.cols());
    if r > d {
        return Err(Error::InvalidArgument(format!("target dimension {r} exceeds input dimension {d}")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two rows".into()));
    }
    let means: Vec<f64> = (0..d).map(|j| math::mean(&x.column(j))).collect();
    let mut centered = x.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    let mut cov = centered.t_matmul(&centered);
    cov.as_mut_slice().iter_mut().for_each(|v| *v /= (n - 1) as f64);
    let (eigenvalues, vectors) = symmetric_eigen(&cov);
    let mut components = vectors.select_columns(&(0..r).collect::<Vec<_>>());
    for c in 0..r {
        let col = components.column(c);
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
        if lead < 0.0 {
            for i in 0..d {
                components[(i, c)] = -components[(i, c)];
            }
        }
    }
    let coords = centered.matmul(&components);
    Ok(PcaResult {
        coords,
        components,
        eigenvalues,
    })
}

/// Reduces standardized data to `r` dimensions.
pub fn reduce(x: &Matrix, r: usize, reducer: Reducer, params: &NeighborEmbedParams, seed: u64) -> Result<Matrix> {
    if r > x.cols() {
        return Err(Error::InvalidArgument(format!(
            "target dimension {r} exceeds input dimension {}",
            x.cols()
        )));
    }
    let coords = match reducer {
        Reducer::Pca => pca(x, r)?.coords,
        Reducer::NeighborEmbed => neighbor_embed(x, r, params, seed)?,
    };
    if !coords.is_finite() {
        return Err(Error::NonFinite("reduced coordinates"));
    }
    Ok(coords)
}

/// Filter, standardize and reduce in one go. With fewer retained dimensions
/// than `r`, the target dimension shrinks to the retained count.
pub fn embed(
    scales: &[ScaleVector],
    r: usize,
    reducer: Reducer,
    params: &NeighborEmbedParams,
    seed: u64,
) -> Result<EmbeddingSpace> {
    let retained = filter_constant_dims(scales)?;
    let st = standardize(scales, &retained);
    let r = r.min(retained.len());
    let coords = reduce(&st.matrix, r, reducer, params, seed)?;
    Ok(EmbeddingSpace {
        item_ids: scales.iter().map(|s| s.item_id.clone()).collect(),
        retained_dims: retained,
        means: st.means,
        stds: st.stds,
        coords,
        reducer,
        seed,
    })
}

/// Fits `a, b` of the low-dimensional similarity `1 / (1 + a d^{2b})` to the
/// target curve that is 1 below `min_dist` and `exp(-(d - min_dist)/spread)`
/// above it, by least squares on a grid search refined around its optimum.
pub fn fit_curve_params(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (1..300).map(|i| i as f64 * 3.0 * spread / 300.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { math::exp(-(x - min_dist) / spread) })
        .collect();
    let loss = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let f = 1.0 / (1.0 + a * math::pow(x, 2.0 * b));
                (f - y) * (f - y)
            })
            .sum()
    };
    let (mut a, mut b) = (1.0, 1.0);
    let (mut ra, mut rb) = (4.0, 1.0);
    let mut best = loss(a, b);
    for _ in 0..40 {
        let (ca, cb) = (a, b);
        for i in -10..=10 {
            for j in -10..=10 {
                let ta = ca + ra * i as f64 / 10.0;
                let tb = cb + rb * j as f64 / 10.0;
                if ta <= 0.0 || tb <= 0.0 {
                    continue;
                }
                let l = loss(ta, tb);
                if l < best {
                    best = l;
                    a = ta;
                    b = tb;
                }
            }
        }
        ra *= 0.5;
        rb *= 0.5;
    }
    (a, b)
}

/// Exact k nearest neighbors (excluding self), ties by lower index.
fn knn(x: &Matrix, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = x.rows();
    (0..n)
        .map(|i| {
            let mut d: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, math::sqrt(sq_dist(x.row(i), x.row(j)))))
                .collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d.truncate(k);
            d
        })
        .collect()
}

/// Fuzzy neighborhood graph: per-point smooth-kNN memberships, symmetrized by
/// probabilistic union. Returns directed edge list `(i, j, w)` with both
/// directions present.
fn fuzzy_graph(x: &Matrix, k: usize) -> Vec<(usize, usize, f64)> {
    let neighbors = knn(x, k);
    let target = math::ln(k as f64) / core::f64::consts::LN_2;
    let mut weights: alloc::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for (i, nb) in neighbors.iter().enumerate() {
        let rho = nb.iter().map(|p| p.1).find(|&d| d > 0.0).unwrap_or(0.0);
        let (mut lo, mut hi, mut sigma) = (0.0, f64::INFINITY, 1.0);
        for _ in 0..64 {
            let s: f64 = nb
                .iter()
                .map(|&(_, d)| math::exp(-((d - rho).max(0.0)) / sigma))
                .sum();
            if (s - target).abs() < 1e-5 {
                break;
            }
            if s > target {
                hi = sigma;
                sigma = (lo + hi) / 2.0;
            } else {
                lo = sigma;
                sigma = if hi.is_infinite() { sigma * 2.0 } else { (lo + hi) / 2.0 };
            }
        }
        for &(j, d) in nb {
            let w = math::exp(-((d - rho).max(0.0)) / sigma.max(1e-12));
            weights.insert((i, j), w);
        }
    }
    let mut edges = Vec::with_capacity(2 * weights.len());
    for (&(i, j), &a) in &weights {
        let back = weights.get(&(j, i)).copied();
        let b = back.unwrap_or(0.0);
        edges.push((i, j, a + b - a * b));
        if back.is_none() {
            edges.push((j, i, a + b - a * b));
        }
    }
    edges.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    edges
}

fn clip(v: f64) -> f64 {
    v.clamp(-4.0, 4.0)
}

/// Seeded UMAP-style embedding: fuzzy kNN graph, PCA initialization scaled to
/// a box of side 10, then stochastic attraction along edges and repulsion
/// from negative samples with a linearly decaying learning rate.
pub fn neighbor_embed(x: &Matrix, r: usize, params: &NeighborEmbedParams, seed: u64) -> Result<Matrix> {
    let n = x.rows();
    if n < 3 {
        return Err(Error::InvalidArgument("neighbor embedding needs at least three rows".into()));
    }
    let k = params.n_neighbors.min(n - 1).max(1);
    let edges = fuzzy_graph(x, k);
    let (a, b) = fit_curve_params(params.min_dist, params.spread);

    let init = pca(x, r)?.coords;
    let mut y = init;
    for c in 0..r {
        let col = y.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        for i in 0..n {
            y[(i, c)] = 10.0 * (y[(i, c)] - lo) / span;
        }
    }
    let mut rng = rng::substream(seed, rng::REDUCER);
    // break exact ties between duplicated inputs
    for v in y.as_mut_slice() {
        *v += 1e-4 * (rng.random::<f64>() - 0.5);
    }

    let max_w = edges.iter().map(|e| e.2).fold(0.0, f64::max);
    let epochs_per_sample: Vec<f64> = edges
        .iter()
        .map(|e| if e.2 > 0.0 { max_w / e.2 } else { f64::INFINITY })
        .collect();
    let neg_rate = params.negative_rate as f64;
    let epochs_per_negative: Vec<f64> = epochs_per_sample.iter().map(|e| e / neg_rate.max(1.0)).collect();
    let mut next_sample = epochs_per_sample.clone();
    let mut next_negative = epochs_per_negative.clone();
    let mut delta = vec![0.0; r];

    for epoch in 0..params.epochs {
        let alpha = params.learning_rate * (1.0 - epoch as f64 / params.epochs as f64);
        let e = epoch as f64;
        for (idx, &(i, j, _)) in edges.iter().enumerate() {
            if next_sample[idx] > e {
                continue;
            }
            let d2 = sq_dist(y.row(i), y.row(j));
            if d2 > 0.0 {
                let coeff = -2.0 * a * b * math::pow(d2, b - 1.0) / (1.0 + a * math::pow(d2, b));
                for c in 0..r {
                    delta[c] = clip(coeff * (y[(i, c)] - y[(j, c)])) * alpha;
                }
                for c in 0..r {
                    y[(i, c)] += delta[c];
                    y[(j, c)] -= delta[c];
                }
            }
            next_sample[idx] += epochs_per_sample[idx];

            let n_neg = ((e - next_negative[idx]) / epochs_per_negative[idx]).max(0.0) as usize;
            for _ in 0..n_neg {
                let other = rng.random_range(0..n);
                if other == i {
                    continue;
                }
                let d2 = sq_dist(y.row(i), y.row(other));
                for c in 0..r {
                    delta[c] = if d2 > 0.0 {
                        let coeff = 2.0 * b / ((0.001 + d2) * (1.0 + a * math::pow(d2, b)));
                        clip(coeff * (y[(i, c)] - y[(other, c)])) * alpha
                    } else {
                        4.0 * alpha
                    };
                }
                for c in 0..r {
                    y[(i, c)] += delta[c];
                }
            }
            next_negative[idx] += n_neg as f64 * epochs_per_negative[idx];
        }
    }
    Ok(y)
}
