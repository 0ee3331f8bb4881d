//! Command-line front end.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use itemsel_core::embedding::{self, NeighborEmbedParams, Reducer};
use itemsel_core::estimators::{self, SubsetScores};
use itemsel_core::gnn::{self, GcnHyperparams, TrainSplit, DEFAULT_K_NEIGHBORS};
use itemsel_core::harness::{self, ExperimentConfig, Method, StandardPipeline, Pipeline};
use itemsel_core::irt::{self, IrtConfig, IrtModel};
use itemsel_core::selection;
use itemsel_core::{Matrix, PerformanceMatrix, ScaleVector};
use serde::Serialize;

use crate::annotator::{self, AnnotationCache, AnnotatorConfig, HttpClient};
use crate::error::{CliError, CliResult};
use crate::formats::{self, ModelEstimate, SubsetFile};
use crate::report;
use crate::run::run_experiment_parallel;

#[derive(Debug, Parser)]
#[command(name = "itemsel", version, about = "Item-centric benchmark subset selection and score estimation")]
pub struct Cli {
    /// Base seed for every random component.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// TOML file; top-level keys set global flags, `[subcommand]` tables set subcommand flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score items on the 16 rubrics with an LLM endpoint.
    Annotate(AnnotateArgs),
    /// Train the scale-prediction GCN on labeled item features.
    GnnTrain(GnnTrainArgs),
    /// Predict scale vectors for items from a trained GCN.
    GnnPredict(GnnPredictArgs),
    /// Standardize annotations and reduce them to a low-dimensional space.
    Embed(EmbedArgs),
    /// Choose a representative subset from an embedding or score matrix.
    Select(SelectArgs),
    /// Estimate full-benchmark scores from subset scores.
    Estimate(EstimateArgs),
    /// Fit a multidimensional 2PL IRT model to a score matrix.
    IrtFit(IrtFitArgs),
    /// Run the held-out evaluation protocol and write MAE reports.
    Evaluate(EvaluateArgs),
    /// Write a synthetic bundle with planted item clusters.
    Synth(SynthArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Annotate(_) => "annotate",
            Command::GnnTrain(_) => "gnn-train",
            Command::GnnPredict(_) => "gnn-predict",
            Command::Embed(_) => "embed",
            Command::Select(_) => "select",
            Command::Estimate(_) => "estimate",
            Command::IrtFit(_) => "irt-fit",
            Command::Evaluate(_) => "evaluate",
            Command::Synth(_) => "synth",
        }
    }
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// items.jsonl
    #[arg(long)]
    pub items: PathBuf,
    /// Directory with one `<dimension>.md` rubric per dimension.
    #[arg(long)]
    pub rubrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_parallel: Option<usize>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// JSONL response cache.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Args)]
pub struct GnnTrainArgs {
    /// features.csv or packed .bin
    #[arg(long)]
    pub features: PathBuf,
    /// Annotations for the labeled items.
    #[arg(long)]
    pub labels: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON training report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K_NEIGHBORS)]
    pub k_neighbors: usize,
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub patience: usize,
    /// Fraction of labeled nodes held out for model selection.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
}

#[derive(Debug, Args)]
pub struct GnnPredictArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Checkpoint written by gnn-train.
    #[arg(long)]
    pub model: PathBuf,
    /// annotations.jsonl for every item in the feature file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K_NEIGHBORS)]
    pub k_neighbors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReducerArg {
    Pca,
    #[value(alias = "umap")]
    NeighborEmbed,
}

impl From<ReducerArg> for Reducer {
    fn from(r: ReducerArg) -> Self {
        match r {
            ReducerArg::Pca => Reducer::Pca,
            ReducerArg::NeighborEmbed => Reducer::NeighborEmbed,
        }
    }
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value = "pca")]
    pub reducer: ReducerArg,
    #[arg(long, default_value_t = embedding::DEFAULT_TARGET_DIM)]
    pub dim: usize,
    #[arg(long, default_value_t = 15)]
    pub n_neighbors: usize,
    #[arg(long, default_value_t = 0.1)]
    pub min_dist: f64,
    /// space.json
    #[arg(long)]
    pub out: PathBuf,
    /// Also write item coordinates as CSV.
    #[arg(long)]
    pub coords_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectArg {
    Kmeans,
    Kmedoids,
    Gmm,
    Random,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// space.json from `embed`.
    #[arg(long, conflicts_with = "perf", required_unless_present = "perf")]
    pub space: Option<PathBuf>,
    /// Cluster items on historical scores instead of an embedding.
    #[arg(long)]
    pub perf: Option<PathBuf>,
    /// Comma-separated source model ids for --perf (default: all models).
    #[arg(long, requires = "perf", value_delimiter = ',')]
    pub source_models: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "kmeans")]
    pub method: SelectArg,
    /// Subset size in percent of the items, in (0, 100].
    #[arg(long, value_parser = parse_percent)]
    pub percent: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Cluster,
    ScalesPp,
    IrtPp,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// subset.json from `select`.
    #[arg(long)]
    pub subset: PathBuf,
    /// Long-form CSV model_id,item_id,score on the selected items.
    #[arg(long)]
    pub subset_scores: PathBuf,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// irt.json from `irt-fit`, for the irt-pp estimator.
    #[arg(long)]
    pub irt: Option<PathBuf>,
    /// Defaults to scales-pp with annotations, irt-pp with --irt, else cluster.
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IrtFitArgs {
    #[arg(long)]
    pub perf: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    #[arg(long, default_value_t = 500)]
    pub max_sweeps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub perf: PathBuf,
    /// Release-order sidecar, needed for recency holdout.
    #[arg(long)]
    pub order: Option<PathBuf>,
    /// Number of most recent models held out as targets.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Comma-separated methods overriding the config file.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of items.
    #[arg(long)]
    pub items: usize,
    /// Number of models.
    #[arg(long)]
    pub models: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_percent(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if p > 0.0 && p <= 100.0 {
        Ok(p)
    } else {
        Err(format!("{p} is outside (0, 100]"))
    }
}

const GLOBAL_KEYS: [&str; 2] = ["seed", "log-level"];

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn has_flag(argv: &[OsString], flag: &str) -> bool {
    let long = format!("--{flag}");
    let eq = format!("{long}=");
    argv.iter()
        .filter_map(|a| a.to_str())
        .any(|a| a == long || a.starts_with(&eq))
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_str()?;
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn subcommand_position(argv: &[OsString]) -> Option<(usize, String)> {
    let names: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect();
    argv.iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| a.to_str().filter(|s| names.iter().any(|n| n == s)).map(|s| (i, s.to_string())))
}

fn toml_scalar(path: &Path, key: &str, v: &toml::Value) -> CliResult<Vec<String>> {
    Ok(match v {
        toml::Value::String(s) => vec![s.clone()],
        toml::Value::Integer(i) => vec![i.to_string()],
        toml::Value::Float(f) => vec![f.to_string()],
        toml::Value::Boolean(true) => vec![],
        toml::Value::Array(a) => {
            let parts = a
                .iter()
                .map(|x| toml_scalar(path, key, x).map(|v| v.join(",")))
                .collect::<CliResult<Vec<_>>>()?;
            vec![parts.join(",")]
        }
        _ => return Err(CliError::format(path, format!("{key}: unsupported value {v}"))),
    })
}

pub fn load_toml(path: &Path) -> CliResult<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.parse::<toml::Table>().map_err(|e| CliError::format(path, e.to_string()))
}

/// Appends flags from the config file that argv does not already set.
pub fn inject_config(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some((pos, sub)) = subcommand_position(&argv) else {
        return Ok(argv);
    };
    let table = load_toml(&path)?;
    let mut extra: Vec<OsString> = Vec::new();
    let push = |key: &str, v: &toml::Value, extra: &mut Vec<OsString>| -> CliResult<()> {
        let flag = flag_name(key);
        if has_flag(&argv, &flag) {
            return Ok(());
        }
        if matches!(v, toml::Value::Boolean(false)) {
            return Ok(());
        }
        extra.push(format!("--{flag}").into());
        extra.extend(toml_scalar(&path, key, v)?.into_iter().map(OsString::from));
        Ok(())
    };
    for (k, v) in &table {
        if GLOBAL_KEYS.contains(&flag_name(k).as_str()) {
            push(k, v, &mut extra)?;
        }
    }
    let section = table.get(&sub).or_else(|| table.get(&sub.replace('-', "_")));
    if let Some(section) = section {
        let toml::Value::Table(t) = section else {
            return Err(CliError::format(&path, format!("[{sub}] must be a table")));
        };
        for (k, v) in t {
            push(k, v, &mut extra)?;
        }
    }
    let mut out = argv;
    let tail = out.split_off(pos + 1);
    out.extend(extra);
    out.extend(tail);
    Ok(out)
}

/// Experiment settings from a config file: top-level keys minus global flags
/// and subcommand tables.
pub fn experiment_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let mut table = load_toml(path)?;
    let subs: Vec<String> = Cli::command()
        .get_subcommands()
        .flat_map(|c| [c.get_name().to_string(), c.get_name().replace('-', "_")])
        .collect();
    table.retain(|k, _| !GLOBAL_KEYS.contains(&flag_name(k).as_str()) && !subs.iter().any(|s| s == k) && k != "config");
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::format(path, e.to_string()))
}

fn init_logging(level: &str) -> CliResult<()> {
    let filter: log::LevelFilter = level
        .parse()
        .map_err(|_| CliError::flag("log-level", format!("unknown level {level:?}")))?;
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format_target(false)
        .target(env_logger::Target::Stderr)
        .try_init();
    Ok(())
}

/// Parses argv (with config injection) and runs the subcommand. Returns the
/// process exit code; diagnostics go to stderr.
pub fn main_with_args(argv: Vec<OsString>) -> i32 {
    let argv = match inject_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    init_logging(&cli.log_level)?;
    log::info!("running {}", cli.command.name());
    let seed = cli.seed;
    match &cli.command {
        Command::Annotate(a) => cmd_annotate(a, cli.config.as_deref()),
        Command::GnnTrain(a) => cmd_gnn_train(a, seed),
        Command::GnnPredict(a) => cmd_gnn_predict(a),
        Command::Embed(a) => cmd_embed(a, seed),
        Command::Select(a) => cmd_select(a, seed),
        Command::Estimate(a) => cmd_estimate(a),
        Command::IrtFit(a) => cmd_irt_fit(a, seed),
        Command::Evaluate(a) => cmd_evaluate(a, cli.config.as_deref()),
        Command::Synth(a) => cmd_synth(a, seed),
    }
}

fn cmd_annotate(a: &AnnotateArgs, _config: Option<&Path>) -> CliResult<()> {
    let mut cfg = AnnotatorConfig::default();
    if let Some(v) = &a.endpoint {
        cfg.endpoint = v.clone();
    }
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    if let Some(v) = a.temperature {
        cfg.temperature = v;
    }
    if let Some(v) = a.max_parallel {
        if v == 0 {
            return Err(CliError::flag("max-parallel", "must be positive"));
        }
        cfg.max_parallel = v;
    }
    if let Some(v) = a.max_retries {
        cfg.max_retries = v;
    }
    if let Some(v) = a.backoff_ms {
        cfg.backoff_ms = v;
    }
    if let Some(v) = a.timeout_secs {
        cfg.timeout_secs = v;
    }
    if let Some(v) = &a.cache {
        cfg.cache_path = v.clone();
    }
    if let Some(v) = &a.api_key_env {
        cfg.api_key_env = v.clone();
    }
    let items = formats::read_items(&a.items)?;
    let rubrics = annotator::load_rubrics(&a.rubrics)?;
    let mut cache = AnnotationCache::open(&cfg.cache_path)?;
    let client = HttpClient::new(&cfg);
    let scales = annotator::annotate_items(&items, &rubrics, &client, &mut cache, &cfg)?;
    log::info!("{} requests issued", client.request_count());
    formats::write_annotations(&a.out, &scales)
}

fn cmd_gnn_train(a: &GnnTrainArgs, seed: u64) -> CliResult<()> {
    if !(0.0..1.0).contains(&a.val_fraction) {
        return Err(CliError::flag("val-fraction", "must be in [0, 1)"));
    }
    let features = formats::read_features(&a.features)?;
    let labels = formats::read_annotations(&a.labels)?;
    let graph = gnn::build_knn_graph(&features, a.k_neighbors).map_err(|e| flag_err("k-neighbors", e))?;
    let labeled: Vec<bool> = gnn::node_labels(&features, &labels).iter().map(Option::is_some).collect();
    let split = TrainSplit::random(&labeled, a.val_fraction, seed);
    let hyper = GcnHyperparams {
        hidden: a.hidden,
        learning_rate: a.learning_rate,
        momentum: a.momentum,
        epochs: a.epochs,
        patience: a.patience,
        seed,
    };
    let (model, rep) = gnn::gcn_train(&features, &graph, &labels, &split, &hyper)?;
    log::info!(
        "best epoch {} with selection accuracy {:.4}",
        rep.best_epoch,
        rep.best_selection_accuracy
    );
    formats::write_checkpoint(&a.out, &model)?;
    if let Some(p) = &a.report {
        formats::write_json(p, &rep)?;
    }
    Ok(())
}

fn flag_err(flag: &str, e: itemsel_core::Error) -> CliError {
    match CliError::from(e) {
        CliError::Validation(m) => CliError::flag(flag, m),
        other => other,
    }
}

fn cmd_gnn_predict(a: &GnnPredictArgs) -> CliResult<()> {
    let features = formats::read_features(&a.features)?;
    let model = formats::read_checkpoint(&a.model)?;
    if model.input_dim != features.dim() {
        return Err(CliError::Validation(format!(
            "checkpoint expects {}-dimensional features, {} has {}",
            model.input_dim,
            a.features.display(),
            features.dim()
        )));
    }
    let graph = gnn::build_knn_graph(&features, a.k_neighbors).map_err(|e| flag_err("k-neighbors", e))?;
    let scales = gnn::predict_scales(&model, &graph, &features)?;
    formats::write_annotations(&a.out, &scales)
}

fn cmd_embed(a: &EmbedArgs, seed: u64) -> CliResult<()> {
    if a.dim == 0 {
        return Err(CliError::flag("dim", "must be positive"));
    }
    let scales = formats::read_annotations(&a.annotations)?;
    let params = NeighborEmbedParams {
        n_neighbors: a.n_neighbors,
        min_dist: a.min_dist,
        ..Default::default()
    };
    let space = embedding::embed(&scales, a.dim, a.reducer.into(), &params, seed)?;
    formats::write_json(&a.out, &space)?;
    if let Some(p) = &a.coords_csv {
        report::write_coords_csv(p, &space.item_ids, &space.coords)?;
    }
    Ok(())
}

fn cmd_select(a: &SelectArgs, seed: u64) -> CliResult<()> {
    if !(a.percent > 0.0 && a.percent <= 100.0) {
        return Err(CliError::flag("percent", format!("{} is outside (0, 100]", a.percent)));
    }
    let (item_ids, coords): (Vec<String>, Matrix) = match (&a.space, &a.perf) {
        (Some(p), _) => {
            let space: embedding::EmbeddingSpace = formats::read_json(p)?;
            (space.item_ids, space.coords)
        }
        (None, Some(p)) => {
            let matrix = formats::read_performance(p)?;
            let sources = a.source_models.clone().unwrap_or_else(|| matrix.model_ids().to_vec());
            let coords = selection::model_centric_embed(&matrix, &sources)?;
            (matrix.item_ids().to_vec(), coords)
        }
        (None, None) => return Err(CliError::flag("space", "either --space or --perf is required")),
    };
    let k = selection::k_from_fraction(a.percent / 100.0, item_ids.len()).map_err(|e| flag_err("percent", e))?;
    let sel = match a.method {
        SelectArg::Kmeans => selection::kmeans_select(&coords, k, seed),
        SelectArg::Kmedoids => selection::kmedoids(&coords, k, seed),
        SelectArg::Gmm => selection::gmm_select(&coords, k, seed),
        SelectArg::Random => selection::random_select(item_ids.len(), k, seed),
    }?;
    formats::write_json(&a.out, &SubsetFile::new(&sel, &item_ids, a.percent))
}

fn scales_in_order(path: &Path, ids: &[String]) -> CliResult<Vec<ScaleVector>> {
    let all = formats::read_annotations(path)?;
    let mut by_id: HashMap<&str, &ScaleVector> = all.iter().map(|s| (s.item_id.as_str(), s)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .remove(id.as_str())
                .cloned()
                .ok_or_else(|| CliError::format(path, format!("no annotation for item {id:?}")))
        })
        .collect()
}

fn cmd_estimate(a: &EstimateArgs) -> CliResult<()> {
    let subset: SubsetFile = formats::read_json(&a.subset)?;
    let sel = subset.selection();
    sel.validate(subset.item_ids.len()).map_err(|e| CliError::format(&a.subset, e.to_string()))?;
    let estimator = a.estimator.unwrap_or(if a.annotations.is_some() {
        EstimatorArg::ScalesPp
    } else if a.irt.is_some() {
        EstimatorArg::IrtPp
    } else {
        EstimatorArg::Cluster
    });
    let scales = match (&a.annotations, estimator) {
        (Some(p), EstimatorArg::ScalesPp) => Some(scales_in_order(p, &subset.item_ids)?),
        (None, EstimatorArg::ScalesPp) => return Err(CliError::flag("annotations", "required by scales-pp")),
        _ => None,
    };
    let retained = match &scales {
        Some(s) => embedding::filter_constant_dims(s)?,
        None => Vec::new(),
    };
    let irt_model: Option<IrtModel> = match (&a.irt, estimator) {
        (Some(p), EstimatorArg::IrtPp) => {
            let m: IrtModel = formats::read_json(p)?;
            if m.item_ids != subset.item_ids {
                return Err(CliError::format(p, "item order differs from the subset's item list"));
            }
            Some(m)
        }
        (None, EstimatorArg::IrtPp) => return Err(CliError::flag("irt", "required by irt-pp")),
        _ => None,
    };
    let rows = formats::read_score_rows(&a.subset_scores)?;
    let mut models: Vec<String> = Vec::new();
    let mut table: HashMap<(String, String), f64> = HashMap::new();
    for (m, i, s) in rows {
        if !models.contains(&m) {
            models.push(m.clone());
        }
        if table.insert((m.clone(), i.clone()), s).is_some() {
            return Err(CliError::format(&a.subset_scores, format!("duplicate score for ({m}, {i})")));
        }
    }
    let method = match estimator {
        EstimatorArg::Cluster => "cluster",
        EstimatorArg::ScalesPp => "scales_pp",
        EstimatorArg::IrtPp => "irt_pp",
    };
    let mut out = Vec::with_capacity(models.len());
    for m in models {
        let scores = subset
            .selected_item_ids
            .iter()
            .map(|id| {
                table.get(&(m.clone(), id.clone())).copied().ok_or_else(|| {
                    CliError::format(&a.subset_scores, format!("model {m:?} has no score for selected item {id:?}"))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        let ss = SubsetScores::new(sel.clone(), scores)?;
        let report = match estimator {
            EstimatorArg::ScalesPp => estimators::scales_pp_estimate(&ss, scales.as_deref().unwrap_or_default(), &retained)?,
            EstimatorArg::IrtPp => irt::irt_pp_estimate(irt_model.as_ref().expect("checked above"), &ss)?,
            EstimatorArg::Cluster => {
                let c = estimators::cluster_estimate(&ss);
                estimators::blend(c, c, 0.0, 0.0)
            }
        };
        out.push(ModelEstimate {
            model_id: m,
            method: method.into(),
            report,
        });
    }
    formats::write_json(&a.out, &out)
}

fn cmd_irt_fit(a: &IrtFitArgs, seed: u64) -> CliResult<()> {
    if a.dim == 0 {
        return Err(CliError::flag("dim", "must be positive"));
    }
    let matrix = formats::read_performance(&a.perf)?;
    let config = IrtConfig {
        dim: a.dim,
        max_sweeps: a.max_sweeps,
        ..Default::default()
    };
    let model = irt::fit_irt(&matrix, &config, seed)?;
    formats::write_json(&a.out, &model)
}

fn load_matrix(perf: &Path, order: Option<&Path>) -> CliResult<PerformanceMatrix> {
    let matrix = formats::read_performance(perf)?;
    match order {
        Some(p) => {
            let ranks = formats::read_order(p)?;
            matrix.with_release_order(&ranks).map_err(|e| CliError::format(p, e.to_string()))
        }
        None => Ok(matrix),
    }
}

#[derive(Serialize)]
struct EvaluateSummary<'a> {
    config: &'a ExperimentConfig,
    train_models: &'a [String],
    test_models: &'a [String],
}

fn cmd_evaluate(a: &EvaluateArgs, config_path: Option<&Path>) -> CliResult<()> {
    let mut config = experiment_config(config_path)?;
    if let Some(h) = a.holdout {
        config.holdout_count = h;
    }
    if let Some(ms) = &a.methods {
        config.methods = ms
            .iter()
            .map(|m| m.parse::<Method>().map_err(|e| CliError::flag("methods", e)))
            .collect::<CliResult<_>>()?;
    }
    let items = formats::read_items(&a.items)?;
    let scales = match &a.annotations {
        Some(p) => Some(formats::read_annotations_for(p, &items)?),
        None => None,
    };
    if scales.is_none() {
        if let Some(m) = config.methods.iter().find(|m| m.needs_scales()) {
            return Err(CliError::flag("annotations", format!("required by method {}", m.as_str())));
        }
    }
    let matrix = load_matrix(&a.perf, a.order.as_deref())?;
    config.validate(matrix.n_models()).map_err(|e| match e {
        itemsel_core::Error::InvalidArgument(m) if m.starts_with("holdout") => CliError::flag("holdout", m),
        other => other.into(),
    })?;
    let bundle = formats::align_bundle(items, scales, matrix)?;
    let split = harness::resolve_split(&config, &bundle.matrix)?;
    let table = run_experiment_parallel(&config, &bundle)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    report::write_mae_csv(&a.out.join("mae.csv"), &table)?;
    report::write_raw_csv(&a.out.join("raw.csv"), &table)?;
    formats::write_json(
        &a.out.join("run.json"),
        &EvaluateSummary {
            config: &config,
            train_models: &split.train,
            test_models: &split.test,
        },
    )?;
    if bundle.scales.is_some() {
        let seed = config.seeds[0];
        let mut p = StandardPipeline::new(Method::ClusteringScales, &config, &bundle, &split)?;
        p.prepare(seed)?;
        if let Some(c) = p.coords() {
            report::write_coords_csv(&a.out.join("coords.csv"), bundle.matrix.item_ids(), c)?;
        }
    }
    for r in table.rows.iter().filter(|r| r.mean.is_none()) {
        log::warn!("{} at {}%: {}", r.method, r.percent * 100.0, r.diagnostic.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> CliResult<()> {
    let syn = harness::generate_synthetic(a.items, a.models, seed).map_err(|e| match e {
        itemsel_core::Error::InvalidArgument(m) => CliError::Validation(m),
        other => other.into(),
    })?;
    let b = &syn.bundle;
    formats::write_items(&a.out.join("items.jsonl"), &b.items)?;
    if let Some(s) = &b.scales {
        formats::write_annotations(&a.out.join("annotations.jsonl"), s)?;
    }
    formats::write_performance(&a.out.join("perf.csv"), &b.matrix)?;
    formats::write_order(&a.out.join("order.csv"), &b.matrix)
}
