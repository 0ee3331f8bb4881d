//! On-disk formats: JSONL items and annotations, long-form CSV scores,
//! release-order and feature CSVs, packed binary features and GCN checkpoints,
//! and the JSON artifacts chained between subcommands.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use itemsel_core::estimators::EstimateReport;
use itemsel_core::gnn::{FeatureMatrix, GcnHyperparams, GcnModel, GcnParams, N_LAYERS, N_LEVELS};
use itemsel_core::harness::DataBundle;
use itemsel_core::selection::{SelectionMethod, SubsetSelection};
use itemsel_core::{BenchmarkItem, Matrix, PerformanceMatrix, ScaleVector, N_DIMS};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Non-blank JSONL lines with 1-based line numbers.
fn jsonl_objects(path: &Path) -> CliResult<Vec<(usize, serde_json::Map<String, Value>)>> {
    let mut out = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(map)) => out.push((lineno, map)),
            Ok(_) => return Err(CliError::format(path, format!("line {lineno}: expected a JSON object"))),
            Err(e) => return Err(CliError::format(path, format!("line {lineno}: {e}"))),
        }
    }
    Ok(out)
}

fn string_field(path: &Path, lineno: usize, obj: &serde_json::Map<String, Value>, name: &str) -> CliResult<String> {
    match obj.get(name) {
        None => Err(CliError::format(path, format!("line {lineno}: missing field {name}"))),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(CliError::format(path, format!("line {lineno}: field {name} must be a string"))),
    }
}

pub fn read_items(path: &Path) -> CliResult<Vec<BenchmarkItem>> {
    let mut items = Vec::new();
    let mut first_line: HashMap<String, usize> = HashMap::new();
    for (lineno, obj) in jsonl_objects(path)? {
        let id = string_field(path, lineno, &obj, "id")?;
        let benchmark = string_field(path, lineno, &obj, "benchmark")?;
        let text = string_field(path, lineno, &obj, "text")?;
        if let Some(prev) = first_line.insert(id.clone(), lineno) {
            return Err(CliError::format(
                path,
                format!("line {lineno}: duplicate id {id:?} (first seen on line {prev})"),
            ));
        }
        let item = BenchmarkItem::new(id, benchmark, text)
            .map_err(|e| CliError::format(path, format!("line {lineno}: {e}")))?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_items(path: &Path, items: &[BenchmarkItem]) -> CliResult<()> {
    write_jsonl(path, items)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::Runtime(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    finish(path, w)
}

/// Annotations in file order, each validated for arity and range.
pub fn read_annotations(path: &Path) -> CliResult<Vec<ScaleVector>> {
    let mut out = Vec::new();
    for (lineno, obj) in jsonl_objects(path)? {
        let item_id = string_field(path, lineno, &obj, "item_id")?;
        let levels = match obj.get("levels") {
            None => return Err(CliError::format(path, format!("line {lineno}: missing field levels"))),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| v.as_i64())
                .collect::<Option<Vec<i64>>>()
                .ok_or_else(|| CliError::format(path, format!("line {lineno}: levels must be integers")))?,
            Some(_) => return Err(CliError::format(path, format!("line {lineno}: levels must be an array"))),
        };
        let sv = ScaleVector::new(item_id, &levels).map_err(|e| CliError::format(path, format!("line {lineno}: {e}")))?;
        out.push(sv);
    }
    Ok(out)
}

/// Annotations aligned with `items`; unknown, duplicate or missing ids are errors.
pub fn read_annotations_for(path: &Path, items: &[BenchmarkItem]) -> CliResult<Vec<ScaleVector>> {
    let raw = read_annotations(path)?;
    itemsel_core::datamodel::align_annotations(items, raw).map_err(|e| CliError::format(path, e.to_string()))
}

#[derive(Serialize)]
struct AnnotationLine<'a> {
    item_id: &'a str,
    levels: &'a [u8; N_DIMS],
}

pub fn write_annotations(path: &Path, scales: &[ScaleVector]) -> CliResult<()> {
    let rows: Vec<AnnotationLine> = scales
        .iter()
        .map(|s| AnnotationLine {
            item_id: &s.item_id,
            levels: &s.levels,
        })
        .collect();
    write_jsonl(path, &rows)
}

fn csv_reader(path: &Path) -> CliResult<csv::Reader<BufReader<File>>> {
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<BufReader<File>>, expected: &[&str]) -> CliResult<()> {
    let h = rdr.headers().map_err(|e| CliError::format(path, e.to_string()))?;
    let got: Vec<&str> = h.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(CliError::format(
            path,
            format!("expected header {}, found {}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// `(model_id, item_id, score)` rows of a long-form score CSV.
pub fn read_score_rows(path: &Path) -> CliResult<Vec<(String, String, f64)>> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["model_id", "item_id", "score"])?;
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let lineno = n + 2;
        let rec = rec.map_err(|e| CliError::format(path, format!("line {lineno}: {e}")))?;
        if rec.len() < 3 {
            return Err(CliError::format(path, format!("line {lineno}: expected 3 columns")));
        }
        let score: f64 = rec[2]
            .parse()
            .map_err(|_| CliError::format(path, format!("line {lineno}: score {:?} is not a number", &rec[2])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(CliError::format(path, format!("line {lineno}: score {score} is outside [0, 1]")));
        }
        rows.push((rec[0].to_string(), rec[1].to_string(), score));
    }
    Ok(rows)
}

pub fn read_performance(path: &Path) -> CliResult<PerformanceMatrix> {
    let rows = read_score_rows(path)?;
    PerformanceMatrix::from_long_form(rows).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn write_score_rows(path: &Path, rows: &[(String, String, f64)]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(["model_id", "item_id", "score"]).map_err(err)?;
    for (m, i, s) in rows {
        w.write_record([m.as_str(), i.as_str(), &s.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_performance(path: &Path, matrix: &PerformanceMatrix) -> CliResult<()> {
    write_score_rows(path, &matrix.to_long_form())
}

pub fn read_order(path: &Path) -> CliResult<Vec<(String, i64)>> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["model_id", "release_rank"])?;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let lineno = n + 2;
        let rec = rec.map_err(|e| CliError::format(path, format!("line {lineno}: {e}")))?;
        let rank: i64 = rec
            .get(1)
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| CliError::format(path, format!("line {lineno}: release_rank must be an integer")))?;
        out.push((rec[0].to_string(), rank));
    }
    Ok(out)
}

pub fn write_order(path: &Path, matrix: &PerformanceMatrix) -> CliResult<()> {
    let order = matrix
        .release_order()
        .ok_or_else(|| CliError::Validation("matrix has no release order".into()))?;
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(["model_id", "release_rank"]).map_err(err)?;
    for (m, r) in matrix.model_ids().iter().zip(order) {
        w.write_record([m.as_str(), &r.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reorders items and annotations to the matrix's item order.
pub fn align_bundle(
    items: Vec<BenchmarkItem>,
    scales: Option<Vec<ScaleVector>>,
    matrix: PerformanceMatrix,
) -> CliResult<DataBundle> {
    let mut by_id: HashMap<String, (BenchmarkItem, Option<ScaleVector>)> = HashMap::new();
    let mut scales_iter = scales.map(|s| s.into_iter());
    for item in items {
        let sv = scales_iter.as_mut().and_then(|it| it.next());
        by_id.insert(item.id.clone(), (item, sv));
    }
    if by_id.len() != matrix.n_items() {
        return Err(CliError::Validation(format!(
            "{} items but the performance matrix has {} items",
            by_id.len(),
            matrix.n_items()
        )));
    }
    let has_scales = scales_iter.is_some();
    let mut out_items = Vec::with_capacity(by_id.len());
    let mut out_scales = Vec::with_capacity(by_id.len());
    for id in matrix.item_ids() {
        let (item, sv) = by_id
            .remove(id)
            .ok_or_else(|| CliError::Validation(format!("item {id:?} has scores but is not in the item file")))?;
        out_items.push(item);
        if let Some(sv) = sv {
            out_scales.push(sv);
        }
    }
    Ok(DataBundle::new(out_items, has_scales.then_some(out_scales), matrix)?)
}

/// `item_id,f0,f1,…` with a header row.
pub fn read_features_csv(path: &Path) -> CliResult<FeatureMatrix> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["item_id"])?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut d = None;
    for (n, rec) in rdr.records().enumerate() {
        let lineno = n + 2;
        let rec = rec.map_err(|e| CliError::format(path, format!("line {lineno}: {e}")))?;
        let row: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::format(path, format!("line {lineno}: non-numeric feature")))?;
        if *d.get_or_insert(row.len()) != row.len() {
            return Err(CliError::format(path, format!("line {lineno}: inconsistent feature count")));
        }
        ids.push(rec[0].to_string());
        data.extend(row);
    }
    let n = ids.len();
    FeatureMatrix::new(ids, Matrix::from_vec(n, d.unwrap_or(0), data)).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn write_features_csv(path: &Path, f: &FeatureMatrix) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut header = vec!["item_id".to_string()];
    header.extend((0..f.dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(err)?;
    for (id, row) in f.item_ids.iter().zip(f.features.iter_rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Binary framing: `u64` little-endian header length, JSON header, payload.
fn write_framed<H: Serialize>(path: &Path, header: &H, payload: &[u8]) -> CliResult<()> {
    let h = serde_json::to_vec(header).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    w.write_all(&(h.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&h).map_err(io)?;
    w.write_all(payload).map_err(io)?;
    finish(path, w)
}

fn read_framed<H: DeserializeOwned>(path: &Path) -> CliResult<(H, Vec<u8>)> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| CliError::io(path, e))?;
    if bytes.len() < 8 {
        return Err(CliError::format(path, "truncated header"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let end = 8usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| CliError::format(path, "header length exceeds file size"))?;
    let header = serde_json::from_slice(&bytes[8..end]).map_err(|e| CliError::format(path, format!("header: {e}")))?;
    Ok((header, bytes[end..].to_vec()))
}

#[derive(Serialize, Deserialize)]
struct PackedHeader {
    n: usize,
    d: usize,
    item_ids: Vec<String>,
}

/// Features as packed little-endian `f32`.
pub fn write_features_bin(path: &Path, f: &FeatureMatrix) -> CliResult<()> {
    let header = PackedHeader {
        n: f.n(),
        d: f.dim(),
        item_ids: f.item_ids.clone(),
    };
    let payload: Vec<u8> = f.features.as_slice().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    write_framed(path, &header, &payload)
}

pub fn read_features_bin(path: &Path) -> CliResult<FeatureMatrix> {
    let (h, payload): (PackedHeader, _) = read_framed(path)?;
    if h.item_ids.len() != h.n || payload.len() != h.n * h.d * 4 {
        return Err(CliError::format(
            path,
            format!("payload of {} bytes does not match n = {}, d = {}", payload.len(), h.n, h.d),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    FeatureMatrix::new(h.item_ids, Matrix::from_vec(h.n, h.d, data)).map_err(|e| CliError::format(path, e.to_string()))
}

/// CSV when the extension is `.csv`, packed binary otherwise.
pub fn read_features(path: &Path) -> CliResult<FeatureMatrix> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_features_csv(path)
    } else {
        read_features_bin(path)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    input_dim: usize,
    hyper: GcnHyperparams,
    layer_shapes: Vec<(usize, usize)>,
    head_shapes: Vec<(usize, usize)>,
    n_params: usize,
}

const CHECKPOINT_FORMAT: &str = "gcn-f64-le-v1";

/// Header (shapes, hyperparameters, seed) plus all parameters as `f64`.
pub fn write_checkpoint(path: &Path, model: &GcnModel) -> CliResult<()> {
    let p = &model.params;
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        input_dim: model.input_dim,
        hyper: model.hyper,
        layer_shapes: p.layers.iter().map(|m| (m.rows(), m.cols())).collect(),
        head_shapes: p.heads.iter().map(|m| (m.rows(), m.cols())).collect(),
        n_params: p.len(),
    };
    let payload: Vec<u8> = p.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_framed(path, &header, &payload)
}

pub fn read_checkpoint(path: &Path) -> CliResult<GcnModel> {
    let (h, payload): (CheckpointHeader, _) = read_framed(path)?;
    if h.format != CHECKPOINT_FORMAT {
        return Err(CliError::format(path, format!("unsupported checkpoint format {:?}", h.format)));
    }
    if h.layer_shapes.len() != N_LAYERS || h.head_shapes.len() != N_DIMS {
        return Err(CliError::format(path, "unexpected tensor count"));
    }
    let mut params = GcnParams {
        layers: h.layer_shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        heads: h.head_shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        head_bias: vec![vec![0.0; N_LEVELS]; N_DIMS],
    };
    if params.len() != h.n_params || payload.len() != h.n_params * 8 {
        return Err(CliError::format(path, "parameter payload does not match the header"));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    params.set_flat(&flat);
    let model = GcnModel {
        input_dim: h.input_dim,
        hyper: h.hyper,
        params,
    };
    model.validate().map_err(|e| CliError::format(path, e.to_string()))?;
    Ok(model)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    finish(path, w)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::format(path, e.to_string()))
}

/// The `select` artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetFile {
    pub method: SelectionMethod,
    pub seed: u64,
    /// Subset size in percent of the item count.
    pub percent: f64,
    pub k: usize,
    /// Every item, in the order the indices refer to.
    pub item_ids: Vec<String>,
    pub selected_item_ids: Vec<String>,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub cluster_sizes: Vec<usize>,
}

impl SubsetFile {
    pub fn new(sel: &SubsetSelection, item_ids: &[String], percent: f64) -> Self {
        SubsetFile {
            method: sel.method,
            seed: sel.seed,
            percent,
            k: sel.len(),
            item_ids: item_ids.to_vec(),
            selected_item_ids: sel.indices.iter().map(|&i| item_ids[i].clone()).collect(),
            indices: sel.indices.clone(),
            weights: sel.weights.clone(),
            cluster_sizes: sel.cluster_sizes.clone(),
        }
    }

    pub fn selection(&self) -> SubsetSelection {
        SubsetSelection {
            method: self.method,
            indices: self.indices.clone(),
            weights: self.weights.clone(),
            cluster_sizes: self.cluster_sizes.clone(),
            seed: self.seed,
        }
    }
}

/// One entry of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEstimate {
    pub model_id: String,
    pub method: String,
    #[serde(flatten)]
    pub report: EstimateReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use itemsel_core::gnn::GcnModel;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn items_missing_text_names_line() {
        let d = tmp();
        let p = d.path().join("items.jsonl");
        fs::write(
            &p,
            "{\"id\":\"a\",\"benchmark\":\"b\",\"text\":\"t\"}\n{\"id\":\"b\",\"benchmark\":\"b\"}\n",
        )
        .unwrap();
        let e = read_items(&p).unwrap_err().to_string();
        assert!(e.ends_with("line 2: missing field text"), "{e}");
    }

    #[test]
    fn duplicate_item_id_is_named() {
        let d = tmp();
        let p = d.path().join("items.jsonl");
        let line = |id: &str| format!("{{\"id\":\"{id}\",\"benchmark\":\"b\",\"text\":\"t\"}}\n");
        fs::write(&p, line("q7") + &line("q8") + &line("q7")).unwrap();
        let e = read_items(&p).unwrap_err().to_string();
        assert!(e.contains("\"q7\""), "{e}");
    }

    #[test]
    fn items_round_trip() {
        let d = tmp();
        let p = d.path().join("items.jsonl");
        let items: Vec<_> = (0..3)
            .map(|i| BenchmarkItem::new(format!("i{i}"), "gsm8k", format!("text {i}")).unwrap())
            .collect();
        write_items(&p, &items).unwrap();
        assert_eq!(read_items(&p).unwrap(), items);
    }

    #[test]
    fn annotation_errors() {
        let d = tmp();
        let p = d.path().join("a.jsonl");
        fs::write(&p, format!("{{\"item_id\":\"a\",\"levels\":{:?}}}\n", [0; 15])).unwrap();
        assert!(read_annotations(&p).unwrap_err().to_string().contains("found 15"));
        let mut lv = [0; 16];
        lv[3] = 6;
        fs::write(&p, format!("{{\"item_id\":\"a\",\"levels\":{lv:?}}}\n")).unwrap();
        assert!(read_annotations(&p).unwrap_err().to_string().contains("dimension 3"));
    }

    #[test]
    fn performance_round_trip_and_errors() {
        let d = tmp();
        let p = d.path().join("perf.csv");
        fs::write(&p, "model_id,item_id,score\nm1,a,1\nm1,b,0\nm1,c,1\nm2,a,0\nm2,b,0\nm2,c,1\n").unwrap();
        let m = read_performance(&p).unwrap();
        assert_eq!((m.n_models(), m.n_items()), (2, 3));
        let q = d.path().join("perf2.csv");
        write_performance(&q, &m).unwrap();
        assert_eq!(read_performance(&q).unwrap(), m);

        fs::write(&p, "model_id,item_id,score\nm1,a,1.5\n").unwrap();
        assert!(read_performance(&p).is_err());
        fs::write(&p, "model_id,item_id,score\nm1,a,1\nm1,b,0\nm1,c,1\nm2,a,0\nm2,b,0\n").unwrap();
        let e = read_performance(&p).unwrap_err().to_string();
        assert!(e.contains("m2") && e.contains("\"c\""), "{e}");
    }

    #[test]
    fn features_binary_round_trip() {
        let d = tmp();
        let p = d.path().join("f.bin");
        let f = FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            Matrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 3.25, 0.0, 1.0]),
        )
        .unwrap();
        write_features_bin(&p, &f).unwrap();
        assert_eq!(read_features(&p).unwrap(), f);
        let c = d.path().join("f.csv");
        write_features_csv(&c, &f).unwrap();
        assert_eq!(read_features(&c).unwrap(), f);
    }

    #[test]
    fn checkpoint_round_trip() {
        let d = tmp();
        let p = d.path().join("m.ckpt");
        let hyper = GcnHyperparams {
            hidden: 4,
            seed: 9,
            ..Default::default()
        };
        let m = GcnModel::init(3, hyper);
        write_checkpoint(&p, &m).unwrap();
        assert_eq!(read_checkpoint(&p).unwrap(), m);
    }
}
