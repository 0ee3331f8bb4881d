//! Graph convolutional predictor for demand levels.
//!
//! Items are nodes, connected to their nearest neighbors by cosine similarity
//! of precomputed feature vectors. Three graph convolutions
//! (`H ← ReLU(Â H W)`) feed 16 linear heads, one per demand dimension, each
//! classifying the level 0–5. Training is full-batch gradient descent with
//! momentum on the summed cross-entropy of the heads, with hand-written
//! backpropagation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ScaleVector, N_DIMS};
use crate::error::{Error, Result};
use crate::math::{self, dot, Matrix};
use crate::rng;

pub const N_LEVELS: usize = 6;
pub const N_LAYERS: usize = 3;
pub const DEFAULT_K_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub item_ids: Vec<String>,
    pub features: Matrix,
}

impl FeatureMatrix {
    pub fn new(item_ids: Vec<String>, features: Matrix) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::InvalidArgument("feature matrix has no rows".into()));
        }
        if item_ids.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} item ids for {} feature rows",
                item_ids.len(),
                features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("features"));
        }
        Ok(FeatureMatrix { item_ids, features })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Undirected graph with self-loops and symmetric normalized adjacency
/// `Â = D^{-1/2}(A + I)D^{-1/2}`, stored as sorted closed neighborhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemGraph {
    neighbors: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
}

impl ItemGraph {
    /// Symmetrizes `edges` (union), adds self-loops and normalizes.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(a, b) in edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
            nb.dedup();
        }
        let degree: Vec<f64> = neighbors.iter().map(|nb| nb.len() as f64).collect();
        let weights = neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| nb.iter().map(|&j| 1.0 / math::sqrt(degree[i] * degree[j])).collect())
            .collect();
        ItemGraph { neighbors, weights }
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    /// Closed neighborhood of `i` (includes `i`).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.neighbors[i]
            .binary_search(&j)
            .map(|p| self.weights[i][p])
            .unwrap_or(0.0)
    }

    /// `Â X`.
    pub fn propagate(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.rows(), self.n(), "propagate: row count mismatch");
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for (i, (nb, w)) in self.neighbors.iter().zip(&self.weights).enumerate() {
            let o = out.row_mut(i);
            for (&j, &wij) in nb.iter().zip(w) {
                for (ov, xv) in o.iter_mut().zip(x.row(j)) {
                    *ov += wij * xv;
                }
            }
        }
        out
    }

    pub fn dense_adjacency(&self) -> Matrix {
        let mut a = Matrix::zeros(self.n(), self.n());
        for (i, (nb, w)) in self.neighbors.iter().zip(&self.weights).enumerate() {
            for (&j, &wij) in nb.iter().zip(w) {
                a[(i, j)] = wij;
            }
        }
        a
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n()).all(|i| self.neighbors[i].iter().all(|&j| self.weight(j, i) == self.weight(i, j)))
    }
}

/// Directed top-`k` cosine neighbors per node (ties to the lower index),
/// symmetrized by union.
pub fn build_knn_graph(features: &FeatureMatrix, k_neighbors: usize) -> Result<ItemGraph> {
    let n = features.n();
    if k_neighbors >= n {
        return Err(Error::InvalidArgument(format!(
            "k_neighbors = {k_neighbors} must be below the node count {n}"
        )));
    }
    let norms: Vec<f64> = features
        .features
        .iter_rows()
        .map(|r| math::sqrt(dot(r, r)))
        .collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroNormFeature(features.item_ids[i].clone()));
    }
    let mut edges = Vec::with_capacity(n * k_neighbors);
    let mut sims: Vec<(usize, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        sims.clear();
        let xi = features.features.row(i);
        for j in 0..n {
            if j != i {
                let s = dot(xi, features.features.row(j)) / (norms[i] * norms[j]);
                sims.push((j, s));
            }
        }
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        edges.extend(sims.iter().take(k_neighbors).map(|&(j, _)| (i, j)));
    }
    Ok(ItemGraph::from_edges(n, &edges))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcnHyperparams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for GcnHyperparams {
    fn default() -> Self {
        GcnHyperparams {
            hidden: 256,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 1000,
            patience: 50,
            seed: 0,
        }
    }
}

/// Trainable tensors. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    /// `d→h`, `h→h`, `h→h`.
    pub layers: Vec<Matrix>,
    /// 16 matrices `h→6`.
    pub heads: Vec<Matrix>,
    /// 16 bias vectors of length 6.
    pub head_bias: Vec<Vec<f64>>,
}

impl GcnParams {
    fn zeros_like(other: &GcnParams) -> Self {
        GcnParams {
            layers: other.layers.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            heads: other.heads.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            head_bias: other.head_bias.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .chain(self.heads.iter_mut())
            .map(|m| m.as_mut_slice())
            .chain(self.head_bias.iter_mut().map(|b| b.as_mut_slice()))
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .chain(self.heads.iter())
            .map(|m| m.as_slice())
            .chain(self.head_bias.iter().map(|b| b.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.slices().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All parameters in a fixed order: layers, head weights, head biases.
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().flat_map(|s| s.iter().copied()).collect()
    }

    /// Inverse of [`GcnParams::to_flat`]. Panics on length mismatch.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat parameter length mismatch");
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub input_dim: usize,
    pub hyper: GcnHyperparams,
    pub params: GcnParams,
}

impl GcnModel {
    /// Glorot-uniform weights from the `gnn` substream of `hyper.seed`, zero biases.
    pub fn init(input_dim: usize, hyper: GcnHyperparams) -> Self {
        let mut rng = rng::substream(hyper.seed, rng::GNN);
        let h = hyper.hidden;
        let mut glorot = |rows: usize, cols: usize| {
            let limit = math::sqrt(6.0 / (rows + cols) as f64);
            let data = (0..rows * cols)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
                .collect();
            Matrix::from_vec(rows, cols, data)
        };
        let layers = vec![glorot(input_dim, h), glorot(h, h), glorot(h, h)];
        let heads = (0..N_DIMS).map(|_| glorot(h, N_LEVELS)).collect();
        GcnModel {
            input_dim,
            hyper,
            params: GcnParams {
                layers,
                heads,
                head_bias: vec![vec![0.0; N_LEVELS]; N_DIMS],
            },
        }
    }

    /// Checks tensor shapes against each other and against `input_dim`.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let h = self.hyper.hidden;
        let ok = p.layers.len() == N_LAYERS
            && p.layers[0].rows() == self.input_dim
            && p.layers.iter().all(|m| m.cols() == h)
            && p.layers[1..].iter().all(|m| m.rows() == h)
            && p.heads.len() == N_DIMS
            && p.heads.iter().all(|m| m.rows() == h && m.cols() == N_LEVELS)
            && p.head_bias.len() == N_DIMS
            && p.head_bias.iter().all(|b| b.len() == N_LEVELS);
        if !ok {
            return Err(Error::Shape("inconsistent GCN parameter shapes".into()));
        }
        if !p.slices().all(|s| s.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("GCN parameters"));
        }
        Ok(())
    }
}

struct Forward {
    /// Inputs to each layer's weight multiply: `ÂX`, `ÂH1`, `ÂH2`.
    propagated: Vec<Matrix>,
    /// Pre-activations `Z1..Z3`.
    pre: Vec<Matrix>,
    /// Last hidden representation `H3`.
    last: Matrix,
    /// One n × 6 logit matrix per head.
    logits: Vec<Matrix>,
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

fn check_shapes(model: &GcnModel, graph: &ItemGraph, features: &FeatureMatrix) -> Result<()> {
    if graph.n() != features.n() {
        return Err(Error::Shape(format!(
            "graph has {} nodes, features have {} rows",
            graph.n(),
            features.n()
        )));
    }
    if model.input_dim != features.dim() {
        return Err(Error::Shape(format!(
            "model expects {} features, got {}",
            model.input_dim,
            features.dim()
        )));
    }
    model.validate()
}

fn forward(params: &GcnParams, graph: &ItemGraph, x: &Matrix) -> Forward {
    let mut propagated = Vec::with_capacity(N_LAYERS);
    let mut pre = Vec::with_capacity(N_LAYERS);
    let mut h = x.clone();
    for w in &params.layers {
        let ah = graph.propagate(&h);
        let z = ah.matmul(w);
        h = relu(&z);
        propagated.push(ah);
        pre.push(z);
    }
    let logits = params
        .heads
        .iter()
        .zip(&params.head_bias)
        .map(|(w, b)| {
            let mut l = h.matmul(w);
            for i in 0..l.rows() {
                for (v, bv) in l.row_mut(i).iter_mut().zip(b) {
                    *v += bv;
                }
            }
            l
        })
        .collect();
    Forward {
        propagated,
        pre,
        last: h,
        logits,
    }
}

/// Per-head logits, one `n × 6` matrix per demand dimension.
pub fn gcn_forward(model: &GcnModel, graph: &ItemGraph, features: &FeatureMatrix) -> Result<Vec<Matrix>> {
    check_shapes(model, graph, features)?;
    Ok(forward(&model.params, graph, &features.features).logits)
}

/// Level with the highest logit, ties to the lower level.
pub fn argmax_level(logits: &[f64]) -> u8 {
    let mut best = 0;
    for (l, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = l;
        }
    }
    best as u8
}

fn softmax(row: &[f64]) -> [f64; N_LEVELS] {
    let lse = math::log_sum_exp(row);
    let mut p = [0.0; N_LEVELS];
    for (pv, v) in p.iter_mut().zip(row) {
        *pv = math::exp(v - lse);
    }
    p
}

/// Node labels as level arrays; `None` for unlabeled nodes.
pub type NodeLabels = Vec<Option<[u8; N_DIMS]>>;

/// Mean (over masked nodes) of cross-entropy summed over the 16 heads.
fn loss_from_logits(logits: &[Matrix], labels: &NodeLabels, mask: &[bool]) -> (f64, usize) {
    let count = mask.iter().filter(|&&m| m).count();
    let mut loss = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let y = labels[i].as_ref().expect("masked node without label");
        for (h, l) in logits.iter().enumerate() {
            let row = l.row(i);
            loss -= row[y[h] as usize] - math::log_sum_exp(row);
        }
    }
    (loss / count.max(1) as f64, count)
}

fn accuracy_from_logits(logits: &[Matrix], labels: &NodeLabels, mask: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let y = labels[i].as_ref().expect("masked node without label");
        for (h, l) in logits.iter().enumerate() {
            hits += usize::from(argmax_level(l.row(i)) == y[h]);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

fn backward(params: &GcnParams, graph: &ItemGraph, fw: &Forward, labels: &NodeLabels, mask: &[bool]) -> GcnParams {
    let n = graph.n();
    let count = mask.iter().filter(|&&m| m).count().max(1) as f64;
    let mut grads = GcnParams::zeros_like(params);
    let mut d_last = Matrix::zeros(n, fw.last.cols());
    for (h, l) in fw.logits.iter().enumerate() {
        let mut dl = Matrix::zeros(n, N_LEVELS);
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            let y = labels[i].as_ref().expect("masked node without label")[h] as usize;
            let p = softmax(l.row(i));
            for (c, d) in dl.row_mut(i).iter_mut().enumerate() {
                *d = (p[c] - f64::from(u8::from(c == y))) / count;
            }
        }
        grads.heads[h] = fw.last.t_matmul(&dl);
        for i in 0..n {
            for (gb, d) in grads.head_bias[h].iter_mut().zip(dl.row(i)) {
                *gb += d;
            }
        }
        let back = dl.matmul_t(&params.heads[h]);
        for (a, b) in d_last.as_mut_slice().iter_mut().zip(back.as_slice()) {
            *a += b;
        }
    }
    let mut d_h = d_last;
    for layer in (0..N_LAYERS).rev() {
        let mut d_z = d_h;
        for (dz, z) in d_z.as_mut_slice().iter_mut().zip(fw.pre[layer].as_slice()) {
            if *z <= 0.0 {
                *dz = 0.0;
            }
        }
        grads.layers[layer] = fw.propagated[layer].t_matmul(&d_z);
        if layer > 0 {
            // Â is symmetric, so Âᵀ(dZ Wᵀ) = Â(dZ Wᵀ)
            d_h = graph.propagate(&d_z.matmul_t(&params.layers[layer]));
        } else {
            d_h = Matrix::zeros(0, 0);
        }
    }
    grads
}

/// Training loss and its gradient with respect to every parameter.
pub fn loss_and_gradient(
    model: &GcnModel,
    graph: &ItemGraph,
    features: &FeatureMatrix,
    labels: &NodeLabels,
    mask: &[bool],
) -> Result<(f64, GcnParams)> {
    check_shapes(model, graph, features)?;
    check_labels(labels, mask, features.n())?;
    let fw = forward(&model.params, graph, &features.features);
    let (loss, _) = loss_from_logits(&fw.logits, labels, mask);
    Ok((loss, backward(&model.params, graph, &fw, labels, mask)))
}

/// Loss only (used by finite-difference checks).
pub fn loss(model: &GcnModel, graph: &ItemGraph, features: &FeatureMatrix, labels: &NodeLabels, mask: &[bool]) -> Result<f64> {
    check_shapes(model, graph, features)?;
    check_labels(labels, mask, features.n())?;
    let fw = forward(&model.params, graph, &features.features);
    Ok(loss_from_logits(&fw.logits, labels, mask).0)
}

fn check_labels(labels: &NodeLabels, mask: &[bool], n: usize) -> Result<()> {
    if labels.len() != n || mask.len() != n {
        return Err(Error::Shape(format!(
            "{} labels and {} mask entries for {n} nodes",
            labels.len(),
            mask.len()
        )));
    }
    Ok(())
}

/// Node labels keyed by item id; nodes without an annotation get `None`.
pub fn node_labels(features: &FeatureMatrix, labels: &[ScaleVector]) -> NodeLabels {
    let map: alloc::collections::BTreeMap<&str, [u8; N_DIMS]> =
        labels.iter().map(|s| (s.item_id.as_str(), s.levels)).collect();
    features.item_ids.iter().map(|id| map.get(id.as_str()).copied()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSplit {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
}

impl TrainSplit {
    /// Shuffles the labeled nodes (seeded) and holds out `val_fraction` of them.
    pub fn random(labeled: &[bool], val_fraction: f64, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..labeled.len()).filter(|&i| labeled[i]).collect();
        let mut rng = rng::substream(seed, rng::GNN);
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_val = math::round(val_fraction.clamp(0.0, 1.0) * idx.len() as f64) as usize;
        let mut train = vec![false; labeled.len()];
        let mut val = vec![false; labeled.len()];
        for (p, &i) in idx.iter().enumerate() {
            if p < n_val {
                val[i] = true;
            } else {
                train[i] = true;
            }
        }
        TrainSplit { train, val }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Validation mean accuracy of the returned parameters (train accuracy
    /// when the validation mask is empty).
    pub best_selection_accuracy: f64,
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub train_loss_history: Vec<f64>,
}

/// Full-batch momentum training; returns the parameters with the best
/// selection accuracy (validation, or train when no validation nodes),
/// ties resolved by lower selection loss, and stops after `patience` epochs
/// without improvement.
pub fn gcn_train(
    features: &FeatureMatrix,
    graph: &ItemGraph,
    labels: &[ScaleVector],
    split: &TrainSplit,
    hyper: &GcnHyperparams,
) -> Result<(GcnModel, TrainReport)> {
    let n = features.n();
    if split.train.len() != n || split.val.len() != n {
        return Err(Error::Shape("split masks do not match node count".into()));
    }
    if !split.train.iter().any(|&m| m) {
        return Err(Error::EmptyTrainMask);
    }
    let node_labels = node_labels(features, labels);
    for (i, (&t, &v)) in split.train.iter().zip(&split.val).enumerate() {
        if (t || v) && node_labels[i].is_none() {
            return Err(Error::MissingAnnotation(features.item_ids[i].clone()));
        }
    }
    let mut model = GcnModel::init(features.dim(), *hyper);
    check_shapes(&model, graph, features)?;
    let has_val = split.val.iter().any(|&m| m);
    let select_mask = if has_val { &split.val } else { &split.train };

    let mut velocity = GcnParams::zeros_like(&model.params);
    let mut best = model.params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut epochs_run = 0;

    for epoch in 0..hyper.epochs {
        epochs_run = epoch + 1;
        let fw = forward(&model.params, graph, &features.features);
        let (train_loss, _) = loss_from_logits(&fw.logits, &node_labels, &split.train);
        if !train_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(train_loss);
        let (sel_loss, _) = loss_from_logits(&fw.logits, &node_labels, select_mask);
        let sel_acc = accuracy_from_logits(&fw.logits, &node_labels, select_mask);
        if sel_acc > best_acc || (sel_acc == best_acc && sel_loss < best_loss) {
            best_acc = sel_acc;
            best_loss = sel_loss;
            best = model.params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                break;
            }
        }
        let grads = backward(&model.params, graph, &fw, &node_labels, &split.train);
        for ((p, v), g) in model
            .params
            .slices_mut()
            .zip(velocity.slices_mut())
            .zip(grads.slices())
        {
            for ((pv, vv), gv) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *vv = hyper.momentum * *vv - hyper.learning_rate * gv;
                *pv += *vv;
            }
        }
    }
    model.params = best;
    let report = TrainReport {
        epochs_run,
        best_epoch,
        best_selection_accuracy: best_acc,
        initial_train_loss: history.first().copied().unwrap_or(f64::NAN),
        final_train_loss: history.last().copied().unwrap_or(f64::NAN),
        train_loss_history: history,
    };
    Ok((model, report))
}

/// Mean per-head accuracy of `model` on the masked nodes.
pub fn accuracy(
    model: &GcnModel,
    graph: &ItemGraph,
    features: &FeatureMatrix,
    labels: &[ScaleVector],
    mask: &[bool],
) -> Result<f64> {
    let logits = gcn_forward(model, graph, features)?;
    let nl = node_labels(features, labels);
    for (i, &m) in mask.iter().enumerate() {
        if m && nl[i].is_none() {
            return Err(Error::MissingAnnotation(features.item_ids[i].clone()));
        }
    }
    Ok(accuracy_from_logits(&logits, &nl, mask))
}

/// Argmax level per head for every node.
pub fn predict_scales(model: &GcnModel, graph: &ItemGraph, features: &FeatureMatrix) -> Result<Vec<ScaleVector>> {
    let logits = gcn_forward(model, graph, features)?;
    Ok(levels_from_logits(&logits, &features.item_ids))
}

pub fn levels_from_logits(logits: &[Matrix], item_ids: &[String]) -> Vec<ScaleVector> {
    item_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut levels = [0u8; N_DIMS];
            for (h, l) in logits.iter().enumerate() {
                levels[h] = argmax_level(l.row(i));
            }
            ScaleVector {
                item_id: id.clone(),
                levels,
            }
        })
        .collect()
}
