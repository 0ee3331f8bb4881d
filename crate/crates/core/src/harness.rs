//! Evaluation protocol.
//!
//! Test models are held out of everything except the "costly" evaluation of
//! the selected items, which is simulated by counted reads from the full
//! matrix. Each (method, seed) job prepares item coordinates once and is then
//! run at every subset fraction; each (method, fraction, seed) cell yields one
//! MAE in percentage points.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};

use rand::Rng;
use rand_distr::{Bernoulli, Distribution};
use serde::{Deserialize, Serialize};

use crate::datamodel::{row_mean, BenchmarkItem, PerformanceMatrix, ScaleVector, N_DIMS};
use crate::embedding::{self, NeighborEmbedParams, Reducer, DEFAULT_TARGET_DIM};
use crate::error::{Error, Result};
use crate::estimators::{self, SubsetScores};
use crate::irt::{self, IrtConfig, IrtModel};
use crate::math::{self, Matrix};
use crate::rng;
use crate::selection::{self, SubsetSelection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    ClusteringScales,
    ScalesPp,
    ClusteringModelcentric,
    IrtPp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Random,
        Method::ClusteringScales,
        Method::ScalesPp,
        Method::ClusteringModelcentric,
        Method::IrtPp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::ClusteringScales => "clustering_scales",
            Method::ScalesPp => "scales_pp",
            Method::ClusteringModelcentric => "clustering_modelcentric",
            Method::IrtPp => "irt_pp",
        }
    }

    pub fn needs_scales(self) -> bool {
        matches!(self, Method::ClusteringScales | Method::ScalesPp)
    }
}

impl core::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clusterer {
    #[default]
    Kmeans,
    Kmedoids,
    Gmm,
}

impl Clusterer {
    pub fn select(self, coords: &Matrix, k: usize, seed: u64) -> Result<SubsetSelection> {
        match self {
            Clusterer::Kmeans => selection::kmeans_select(coords, k, seed),
            Clusterer::Kmedoids => selection::kmedoids(coords, k, seed),
            Clusterer::Gmm => selection::gmm_select(coords, k, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    /// Subset sizes as fractions of the item count.
    pub percents: Vec<f64>,
    pub seeds: Vec<u64>,
    pub holdout_count: usize,
    /// Explicit split; overrides `holdout_count` when `test_models` is set.
    pub train_models: Option<Vec<String>>,
    pub test_models: Option<Vec<String>>,
    pub reducer: Reducer,
    pub target_dim: usize,
    pub clusterer: Clusterer,
    pub neighbor_embed: NeighborEmbedParams,
    pub irt: IrtConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: vec![Method::Random, Method::ClusteringScales, Method::ScalesPp],
            percents: vec![0.005, 0.01, 0.02, 0.05, 0.1],
            seeds: (0..10).collect(),
            holdout_count: 0,
            train_models: None,
            test_models: None,
            reducer: Reducer::Pca,
            target_dim: DEFAULT_TARGET_DIM,
            clusterer: Clusterer::Kmeans,
            neighbor_embed: NeighborEmbedParams::default(),
            irt: IrtConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, n_models: usize) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("methods must not be empty".into()));
        }
        if let Some(p) = self.percents.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::InvalidArgument(format!("percents: {p} is outside (0, 1]")));
        }
        if self.percents.is_empty() {
            return Err(Error::InvalidArgument("percents must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("seeds must not be empty".into()));
        }
        if self.test_models.is_none() && self.holdout_count >= n_models {
            return Err(Error::InvalidArgument(format!(
                "holdout_count = {} must be below the model count {n_models}",
                self.holdout_count
            )));
        }
        if self.target_dim == 0 {
            return Err(Error::InvalidArgument("target_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Everything an experiment reads. `scales` is aligned with `items` and the
/// matrix's item order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBundle {
    pub items: Vec<BenchmarkItem>,
    pub scales: Option<Vec<ScaleVector>>,
    pub matrix: PerformanceMatrix,
}

impl DataBundle {
    pub fn new(items: Vec<BenchmarkItem>, scales: Option<Vec<ScaleVector>>, matrix: PerformanceMatrix) -> Result<Self> {
        crate::datamodel::validate_items(&items)?;
        if items.len() != matrix.n_items() || items.iter().zip(matrix.item_ids()).any(|(a, b)| &a.id != b) {
            return Err(Error::Shape("items and performance matrix disagree on item order".into()));
        }
        if let Some(s) = &scales {
            if s.len() != items.len() || s.iter().zip(&items).any(|(a, b)| a.item_id != b.id) {
                return Err(Error::Shape("annotations are not aligned with items".into()));
            }
        }
        Ok(DataBundle { items, scales, matrix })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl ModelSplit {
    /// Explicit id lists; both must be known and disjoint.
    pub fn explicit(matrix: &PerformanceMatrix, train: Vec<String>, test: Vec<String>) -> Result<Self> {
        for id in train.iter().chain(&test) {
            if matrix.model_index(id).is_none() {
                return Err(Error::UnknownModel(id.clone()));
            }
        }
        if let Some(id) = train.iter().find(|id| test.contains(id)) {
            return Err(Error::InvalidArgument(format!("model {id:?} is in both train and test")));
        }
        Ok(ModelSplit { train, test })
    }

    /// Explicit test list, everything else trains.
    pub fn complement(matrix: &PerformanceMatrix, test: Vec<String>) -> Result<Self> {
        let train = matrix
            .model_ids()
            .iter()
            .filter(|id| !test.contains(id))
            .cloned()
            .collect();
        ModelSplit::explicit(matrix, train, test)
    }
}

/// The `holdout_count` most recent models (ties broken by id) form the test set.
pub fn split_models(matrix: &PerformanceMatrix, holdout_count: usize) -> Result<ModelSplit> {
    let order = matrix.release_order().ok_or(Error::MissingReleaseOrder)?;
    let n = matrix.n_models();
    if holdout_count >= n {
        return Err(Error::InvalidArgument(format!(
            "holdout_count = {holdout_count} must be below the model count {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let ids = matrix.model_ids();
    idx.sort_by(|&a, &b| order[a].cmp(&order[b]).then_with(|| ids[a].cmp(&ids[b])));
    let cut = n - holdout_count;
    Ok(ModelSplit {
        train: idx[..cut].iter().map(|&i| ids[i].clone()).collect(),
        test: idx[cut..].iter().map(|&i| ids[i].clone()).collect(),
    })
}

/// Split as configured: explicit lists when given, recency otherwise.
pub fn resolve_split(config: &ExperimentConfig, matrix: &PerformanceMatrix) -> Result<ModelSplit> {
    match (&config.train_models, &config.test_models) {
        (Some(train), Some(test)) => ModelSplit::explicit(matrix, train.clone(), test.clone()),
        (None, Some(test)) => ModelSplit::complement(matrix, test.clone()),
        (Some(_), None) => Err(Error::InvalidArgument("train_models requires test_models".into())),
        (None, None) => split_models(matrix, config.holdout_count),
    }
}

/// Per-item score access for a target model.
pub trait ScoreSource {
    fn score(&self, model: usize, item: usize) -> f64;
}

impl ScoreSource for PerformanceMatrix {
    fn score(&self, model: usize, item: usize) -> f64 {
        PerformanceMatrix::score(self, model, item)
    }
}

/// Wraps a matrix and records every read.
pub struct CountingScores<'a> {
    matrix: &'a PerformanceMatrix,
    counts: Vec<Cell<usize>>,
    log: RefCell<Vec<(usize, usize)>>,
}

impl<'a> CountingScores<'a> {
    pub fn new(matrix: &'a PerformanceMatrix) -> Self {
        CountingScores {
            matrix,
            counts: (0..matrix.n_models()).map(|_| Cell::new(0)).collect(),
            log: RefCell::new(Vec::new()),
        }
    }

    pub fn reads(&self, model: usize) -> usize {
        self.counts[model].get()
    }

    pub fn total_reads(&self) -> usize {
        self.counts.iter().map(Cell::get).sum()
    }

    /// Every `(model, item)` read, in order.
    pub fn log(&self) -> Vec<(usize, usize)> {
        self.log.borrow().clone()
    }

    pub fn reset(&self) {
        self.counts.iter().for_each(|c| c.set(0));
        self.log.borrow_mut().clear();
    }
}

impl ScoreSource for CountingScores<'_> {
    fn score(&self, model: usize, item: usize) -> f64 {
        let c = &self.counts[model];
        c.set(c.get() + 1);
        self.log.borrow_mut().push((model, item));
        self.matrix.score(model, item)
    }
}

/// A selection-plus-estimation method as seen by the runner.
pub trait Pipeline {
    fn name(&self) -> String;
    /// Seed-dependent work shared by every subset size (embedding, IRT fit).
    fn prepare(&mut self, seed: u64) -> Result<()>;
    fn select(&self, k: usize, seed: u64) -> Result<SubsetSelection>;
    /// Estimated full-benchmark score of matrix row `model` from its subset scores.
    fn estimate(&self, model: usize, ss: &SubsetScores) -> Result<f64>;
    /// Message describing a fallback taken during `prepare`, if any.
    fn note(&self) -> Option<String> {
        None
    }
}

enum Prepared {
    None,
    Coords(Matrix),
    Scales { coords: Matrix, retained: Vec<usize> },
    Irt { model: IrtModel, coords: Matrix },
    Fallback,
}

pub struct StandardPipeline<'a> {
    method: Method,
    config: &'a ExperimentConfig,
    bundle: &'a DataBundle,
    train: &'a [String],
    prepared: Prepared,
    note: Option<String>,
}

impl<'a> StandardPipeline<'a> {
    pub fn new(method: Method, config: &'a ExperimentConfig, bundle: &'a DataBundle, split: &'a ModelSplit) -> Result<Self> {
        if method.needs_scales() && bundle.scales.is_none() {
            return Err(Error::InvalidArgument(format!("{} requires annotations", method.as_str())));
        }
        if matches!(method, Method::ClusteringModelcentric | Method::IrtPp) && split.train.is_empty() {
            return Err(Error::EmptySourceSet);
        }
        Ok(StandardPipeline {
            method,
            config,
            bundle,
            train: &split.train,
            prepared: Prepared::None,
            note: None,
        })
    }

    /// Coordinates the clusterer runs on, if this method clusters.
    pub fn coords(&self) -> Option<&Matrix> {
        match &self.prepared {
            Prepared::Coords(c) | Prepared::Scales { coords: c, .. } | Prepared::Irt { coords: c, .. } => Some(c),
            _ => None,
        }
    }
}

impl Pipeline for StandardPipeline<'_> {
    fn name(&self) -> String {
        self.method.as_str().to_string()
    }

    fn prepare(&mut self, seed: u64) -> Result<()> {
        self.note = None;
        self.prepared = match self.method {
            Method::Random => Prepared::None,
            Method::ClusteringScales | Method::ScalesPp => {
                let scales = self.bundle.scales.as_deref().unwrap_or_default();
                match embedding::embed(
                    scales,
                    self.config.target_dim,
                    self.config.reducer,
                    &self.config.neighbor_embed,
                    seed,
                ) {
                    Ok(space) => Prepared::Scales {
                        coords: space.coords,
                        retained: space.retained_dims,
                    },
                    Err(Error::DegenerateEmbedding) => {
                        self.note = Some("degenerate embedding: fell back to random selection".into());
                        Prepared::Fallback
                    }
                    Err(e) => return Err(e),
                }
            }
            Method::ClusteringModelcentric => {
                Prepared::Coords(selection::model_centric_embed(&self.bundle.matrix, self.train)?)
            }
            Method::IrtPp => {
                let train = self.bundle.matrix.select_models(self.train)?;
                let model = irt::fit_irt(&train, &self.config.irt, seed)?;
                let coords = irt::irt_item_coords(&model);
                Prepared::Irt { model, coords }
            }
        };
        Ok(())
    }

    fn select(&self, k: usize, seed: u64) -> Result<SubsetSelection> {
        let n = self.bundle.matrix.n_items();
        match &self.prepared {
            Prepared::None | Prepared::Fallback => selection::random_select(n, k, seed),
            Prepared::Coords(c) | Prepared::Scales { coords: c, .. } | Prepared::Irt { coords: c, .. } => {
                self.config.clusterer.select(c, k, seed)
            }
        }
    }

    fn estimate(&self, _model: usize, ss: &SubsetScores) -> Result<f64> {
        match (&self.prepared, self.method) {
            (Prepared::Scales { retained, .. }, Method::ScalesPp) => {
                let scales = self.bundle.scales.as_deref().unwrap_or_default();
                Ok(estimators::scales_pp_estimate(ss, scales, retained)?.final_estimate)
            }
            (Prepared::Irt { model, .. }, _) => Ok(irt::irt_pp_estimate(model, ss)?.final_estimate),
            _ => Ok(estimators::cluster_estimate(ss)),
        }
    }

    fn note(&self) -> Option<String> {
        self.note.clone()
    }
}

/// Outcome of one (method, fraction, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: String,
    pub percent: f64,
    pub seed: u64,
    pub k: usize,
    /// MAE in percentage points; `None` when the cell failed.
    pub mae: Option<f64>,
    pub estimates: Vec<f64>,
    pub truths: Vec<f64>,
    /// Score reads per test model (same order as the split's test list).
    pub reads_per_model: Vec<usize>,
    pub diagnostic: Option<String>,
}

impl CellResult {
    fn failed(method: String, percent: f64, seed: u64, k: usize, diagnostic: String) -> Self {
        CellResult {
            method,
            percent,
            seed,
            k,
            mae: None,
            estimates: Vec::new(),
            truths: Vec::new(),
            reads_per_model: Vec::new(),
            diagnostic: Some(diagnostic),
        }
    }
}

fn run_cell<P: Pipeline + ?Sized>(
    pipeline: &P,
    matrix: &PerformanceMatrix,
    test: &[usize],
    percent: f64,
    seed: u64,
    note: &Option<String>,
) -> CellResult {
    let name = pipeline.name();
    let n = matrix.n_items();
    let k = match selection::k_from_fraction(percent, n) {
        Ok(k) => k,
        Err(e) => return CellResult::failed(name, percent, seed, 0, e.to_string()),
    };
    if test.is_empty() {
        return CellResult::failed(name, percent, seed, k, "no test models".into());
    }
    let sel = match pipeline.select(k, seed) {
        Ok(s) => s,
        Err(e) => return CellResult::failed(name, percent, seed, k, format!("selection: {e}")),
    };
    let source = CountingScores::new(matrix);
    let mut estimates = Vec::with_capacity(test.len());
    let mut truths = Vec::with_capacity(test.len());
    for &m in test {
        let scores: Vec<f64> = sel.indices.iter().map(|&i| source.score(m, i)).collect();
        let est = SubsetScores::new(sel.clone(), scores).and_then(|ss| pipeline.estimate(m, &ss));
        match est {
            Ok(e) if e.is_finite() => estimates.push(e),
            Ok(_) => return CellResult::failed(name, percent, seed, k, "non-finite estimate".into()),
            Err(e) => return CellResult::failed(name, percent, seed, k, format!("estimation: {e}")),
        }
        truths.push(row_mean(matrix.row(m)));
    }
    let abs: Vec<f64> = estimates.iter().zip(&truths).map(|(e, t)| (e - t).abs()).collect();
    CellResult {
        method: name,
        percent,
        seed,
        k,
        mae: Some(math::mean(&abs) * 100.0),
        estimates,
        truths,
        reads_per_model: test.iter().map(|&m| source.reads(m)).collect(),
        diagnostic: note.clone(),
    }
}

/// Prepares `pipeline` for `seed` and runs it at every fraction.
pub fn run_pipeline_seed<P: Pipeline + ?Sized>(
    pipeline: &mut P,
    matrix: &PerformanceMatrix,
    split: &ModelSplit,
    percents: &[f64],
    seed: u64,
) -> Result<Vec<CellResult>> {
    let test: Vec<usize> = split
        .test
        .iter()
        .map(|id| matrix.model_index(id).ok_or_else(|| Error::UnknownModel(id.clone())))
        .collect::<Result<_>>()?;
    if let Err(e) = pipeline.prepare(seed) {
        let name = pipeline.name();
        return Ok(percents
            .iter()
            .map(|&p| {
                let k = selection::k_from_fraction(p, matrix.n_items()).unwrap_or(0);
                CellResult::failed(name.clone(), p, seed, k, format!("prepare: {e}"))
            })
            .collect());
    }
    let note = pipeline.note();
    Ok(percents
        .iter()
        .map(|&p| run_cell(pipeline, matrix, &test, p, seed, &note))
        .collect())
}

/// One standard (method, seed) job.
pub fn run_seed(
    config: &ExperimentConfig,
    bundle: &DataBundle,
    split: &ModelSplit,
    method: Method,
    seed: u64,
) -> Result<Vec<CellResult>> {
    let mut p = StandardPipeline::new(method, config, bundle, split)?;
    run_pipeline_seed(&mut p, &bundle.matrix, split, &config.percents, seed)
}

/// Aggregate row for one (method, fraction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    pub method: String,
    pub percent: f64,
    /// Mean and sample std of per-seed MAE; `None` unless every seed succeeded.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_seeds: usize,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeTable {
    pub rows: Vec<MaeRow>,
    pub cells: Vec<CellResult>,
}

impl MaeTable {
    /// Groups cells by (method, fraction) in first-seen order; within a group
    /// cells are sorted by seed.
    pub fn from_cells(mut cells: Vec<CellResult>) -> Self {
        let mut order: Vec<(String, u64)> = Vec::new();
        let mut groups: BTreeMap<(String, u64), Vec<usize>> = BTreeMap::new();
        cells.sort_by(|a, b| a.seed.cmp(&b.seed));
        for (i, c) in cells.iter().enumerate() {
            let key = (c.method.clone(), c.percent.to_bits());
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(i);
        }
        let rows = order
            .iter()
            .map(|key| {
                let idx = &groups[key];
                let maes: Vec<f64> = idx.iter().filter_map(|&i| cells[i].mae).collect();
                let failures: Vec<String> = idx
                    .iter()
                    .filter(|&&i| cells[i].mae.is_none())
                    .map(|&i| {
                        format!(
                            "seed {}: {}",
                            cells[i].seed,
                            cells[i].diagnostic.as_deref().unwrap_or("failed")
                        )
                    })
                    .collect();
                let notes: Vec<&str> = idx.iter().filter_map(|&i| cells[i].diagnostic.as_deref()).collect();
                let complete = failures.is_empty();
                MaeRow {
                    method: key.0.clone(),
                    percent: f64::from_bits(key.1),
                    mean: complete.then(|| math::mean(&maes)),
                    std: complete.then(|| math::sample_std(&maes)),
                    n_seeds: maes.len(),
                    diagnostic: if !complete {
                        Some(failures.join("; "))
                    } else {
                        notes.first().map(|s| s.to_string())
                    },
                }
            })
            .collect();
        MaeTable { rows, cells }
    }

    pub fn row(&self, method: &str, percent: f64) -> Option<&MaeRow> {
        self.rows.iter().find(|r| r.method == method && r.percent == percent)
    }

    pub fn seed_maes(&self, method: &str, percent: f64) -> Vec<(u64, Option<f64>)> {
        self.cells
            .iter()
            .filter(|c| c.method == method && c.percent == percent)
            .map(|c| (c.seed, c.mae))
            .collect()
    }
}

/// Every (method, seed) job in sequence; cells within a job share one
/// preparation. Methods run in config order.
pub fn run_experiment(config: &ExperimentConfig, bundle: &DataBundle) -> Result<MaeTable> {
    config.validate(bundle.matrix.n_models())?;
    let split = resolve_split(config, &bundle.matrix)?;
    let mut cells = Vec::new();
    for &method in &config.methods {
        for &seed in &config.seeds {
            cells.extend(run_seed(config, bundle, &split, method, seed)?);
        }
    }
    Ok(MaeTable::from_cells(cells))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    /// Base level of each planted cluster; its length is the cluster count.
    pub base_levels: [f64; 4],
    /// Std of the per-dimension offset of a cluster center from its base level.
    pub center_jitter: f64,
    /// Std of item levels around their cluster center (before rounding).
    pub item_noise: f64,
    /// Model mean abilities are uniform on this range.
    pub ability_range: (f64, f64),
    /// Std of per-dimension ability around the model mean.
    pub ability_noise: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            base_levels: [-0.5, 0.0, 5.0, 5.5],
            center_jitter: 0.5,
            item_noise: 0.3,
            ability_range: (2.25, 2.75),
            ability_noise: 0.2,
        }
    }
}

/// A generated bundle together with its latent structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBundle {
    pub bundle: DataBundle,
    /// Planted cluster of every item.
    pub clusters: Vec<usize>,
    /// models × 16 abilities.
    pub abilities: Matrix,
    /// models × items success probabilities.
    pub probabilities: Matrix,
    /// Row means of `probabilities`.
    pub expected_scores: Vec<f64>,
}

/// `mean_d σ(a_d − level_d)`.
pub fn success_probability(abilities: &[f64], levels: &[u8; N_DIMS]) -> f64 {
    abilities
        .iter()
        .zip(levels)
        .map(|(&a, &l)| {
            if a == f64::INFINITY {
                1.0
            } else {
                math::sigmoid(a - f64::from(l))
            }
        })
        .sum::<f64>()
        / N_DIMS as f64
}

pub fn generate_synthetic(n_items: usize, n_models: usize, seed: u64) -> Result<SyntheticBundle> {
    generate_synthetic_with(n_items, n_models, seed, &SyntheticParams::default(), None)
}

/// Planted-cluster generator. Cluster `c` is centered at its base level plus
/// per-dimension jitter; items round a Gaussian draw around their
/// center; model `m` has release rank `m`. `abilities` overrides the sampled
/// ability matrix.
pub fn generate_synthetic_with(
    n_items: usize,
    n_models: usize,
    seed: u64,
    params: &SyntheticParams,
    abilities: Option<Matrix>,
) -> Result<SyntheticBundle> {
    if n_items < 10 || n_models < 10 {
        return Err(Error::InvalidArgument(format!(
            "synthetic bundle needs at least 10 items and 10 models, got {n_items} x {n_models}"
        )));
    }
    let mut rng = rng::substream(seed, rng::SYNTH);
    let nc = params.base_levels.len();
    let mut centers = Matrix::zeros(nc, N_DIMS);
    for (c, &base) in params.base_levels.iter().enumerate() {
        for d in 0..N_DIMS {
            centers[(c, d)] = base + rng::normal(&mut rng, 0.0, params.center_jitter);
        }
    }
    let mut clusters = Vec::with_capacity(n_items);
    let mut items = Vec::with_capacity(n_items);
    let mut scales = Vec::with_capacity(n_items);
    let width = digits(n_items);
    for i in 0..n_items {
        let c = rng.random_range(0..nc);
        let mut levels = [0u8; N_DIMS];
        for (d, l) in levels.iter_mut().enumerate() {
            let v = centers[(c, d)] + rng::normal(&mut rng, 0.0, params.item_noise);
            *l = math::round(v).clamp(0.0, 5.0) as u8;
        }
        let id = format!("item{i:0width$}");
        items.push(BenchmarkItem {
            id: id.clone(),
            benchmark: format!("synthetic{c}"),
            text: format!("Synthetic question {i} from group {c}."),
        });
        scales.push(ScaleVector { item_id: id, levels });
        clusters.push(c);
    }
    let abilities = match abilities {
        Some(a) => {
            if a.rows() != n_models || a.cols() != N_DIMS {
                return Err(Error::Shape(format!(
                    "ability override is {}x{}, expected {n_models}x{N_DIMS}",
                    a.rows(),
                    a.cols()
                )));
            }
            a
        }
        None => {
            let (lo, hi) = params.ability_range;
            let mut a = Matrix::zeros(n_models, N_DIMS);
            for m in 0..n_models {
                let mu = lo + (hi - lo) * rng.random::<f64>();
                for d in 0..N_DIMS {
                    a[(m, d)] = mu + rng::normal(&mut rng, 0.0, params.ability_noise);
                }
            }
            a
        }
    };
    let mut probabilities = Matrix::zeros(n_models, n_items);
    let mut scores = Vec::with_capacity(n_models * n_items);
    for m in 0..n_models {
        for (i, s) in scales.iter().enumerate() {
            let p = success_probability(abilities.row(m), &s.levels);
            probabilities[(m, i)] = p;
            let y = Bernoulli::new(p.clamp(0.0, 1.0)).map_err(|_| Error::NonFinite("probability"))?;
            scores.push(if y.sample(&mut rng) { 1.0 } else { 0.0 });
        }
    }
    let mwidth = digits(n_models);
    let model_ids: Vec<String> = (0..n_models).map(|m| format!("model{m:0mwidth$}")).collect();
    let ranks: Vec<(String, i64)> = model_ids.iter().cloned().zip(0..).collect();
    let matrix = PerformanceMatrix::new(model_ids, items.iter().map(|it| it.id.clone()).collect(), scores)?
        .with_release_order(&ranks)?;
    let expected_scores = (0..n_models).map(|m| math::mean(probabilities.row(m))).collect();
    Ok(SyntheticBundle {
        bundle: DataBundle {
            items,
            scales: Some(scales),
            matrix,
        },
        clusters,
        abilities,
        probabilities,
        expected_scores,
    })
}

fn digits(n: usize) -> usize {
    let mut d = 1;
    let mut v = n.saturating_sub(1);
    while v >= 10 {
        v /= 10;
        d += 1;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticBundle {
        generate_synthetic(60, 12, 5).unwrap()
    }

    #[test]
    fn split_by_recency_with_id_ties() {
        let m = PerformanceMatrix::new(
            vec!["c".into(), "a".into(), "b".into(), "d".into()],
            vec!["i".into()],
            vec![0.0; 4],
        )
        .unwrap()
        .with_release_order(&[("c", 2), ("a", 2), ("b", 1), ("d", 0)])
        .unwrap();
        let s = split_models(&m, 2).unwrap();
        assert_eq!(s.train, vec!["d", "b"]);
        assert_eq!(s.test, vec!["a", "c"]);
        let s = split_models(&m, 0).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.train.len(), 4);
        assert!(split_models(&m, 4).is_err());
    }

    #[test]
    fn split_requires_ordering() {
        let m = PerformanceMatrix::new(vec!["a".into(), "b".into()], vec!["i".into()], vec![0.0; 2]).unwrap();
        assert_eq!(split_models(&m, 1), Err(Error::MissingReleaseOrder));
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(small(), small());
        assert_ne!(small().bundle.matrix, generate_synthetic(60, 12, 6).unwrap().bundle.matrix);
    }

    #[test]
    fn infinite_ability_gives_all_ones() {
        let a = Matrix::from_vec(10, N_DIMS, vec![f64::INFINITY; 10 * N_DIMS]);
        let sb = generate_synthetic_with(20, 10, 1, &SyntheticParams::default(), Some(a)).unwrap();
        for m in 0..10 {
            assert!(sb.bundle.matrix.row(m).iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn full_subset_is_exact() {
        let sb = small();
        let config = ExperimentConfig {
            methods: vec![Method::Random, Method::ClusteringScales, Method::ScalesPp],
            percents: vec![1.0],
            seeds: vec![0, 1],
            holdout_count: 4,
            ..Default::default()
        };
        let t = run_experiment(&config, &sb.bundle).unwrap();
        for r in &t.rows {
            assert!(r.mean.is_some_and(|m| m < 1e-9), "{r:?}");
        }
    }

    #[test]
    fn reads_match_subset_size() {
        let sb = small();
        let config = ExperimentConfig {
            methods: vec![Method::ScalesPp],
            percents: vec![0.1],
            seeds: vec![3],
            holdout_count: 4,
            ..Default::default()
        };
        let t = run_experiment(&config, &sb.bundle).unwrap();
        let c = &t.cells[0];
        assert_eq!(c.k, 6);
        assert_eq!(c.reads_per_model, vec![6; 4]);
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate(5).is_ok());
        c.percents = vec![0.0];
        assert!(c.validate(5).is_err());
        c.percents = vec![0.5];
        c.seeds.clear();
        assert!(c.validate(5).is_err());
        c.seeds = vec![1];
        c.holdout_count = 5;
        assert!(c.validate(5).is_err());
    }

    #[test]
    fn table_marks_partial_rows() {
        let ok = |seed| CellResult {
            method: "random".into(),
            percent: 0.1,
            seed,
            k: 1,
            mae: Some(seed as f64),
            estimates: vec![],
            truths: vec![],
            reads_per_model: vec![],
            diagnostic: None,
        };
        let t = MaeTable::from_cells(vec![ok(2), ok(1)]);
        assert_eq!(t.rows[0].mean, Some(1.5));
        assert_eq!(t.rows[0].n_seeds, 2);
        let bad = CellResult::failed("random".into(), 0.1, 3, 1, "boom".into());
        let t = MaeTable::from_cells(vec![ok(1), bad]);
        assert_eq!(t.rows[0].mean, None);
        assert!(t.rows[0].diagnostic.as_deref().unwrap().contains("boom"));
    }
}
