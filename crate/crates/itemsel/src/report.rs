//! CSV reports written by `evaluate`.

use std::path::Path;

use itemsel_core::harness::MaeTable;
use itemsel_core::Matrix;

use crate::error::{CliError, CliResult};

pub const NA: &str = "NA";

/// Shortest round-trip decimal; stable across runs and platforms.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else {
        format!("{x}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_else(|| NA.into())
}

fn writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Runtime(format!("{}: {other:?}", path.display())),
    }
}

/// `method,percent,mean,std,n_seeds,diagnostic`; percent in percent units.
pub fn write_mae_csv(path: &Path, table: &MaeTable) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "percent", "mean", "std", "n_seeds", "diagnostic"])
        .map_err(|e| csv_err(path, e))?;
    for r in &table.rows {
        w.write_record([
            r.method.clone(),
            fmt_f64(r.percent * 100.0),
            fmt_opt(r.mean),
            fmt_opt(r.std),
            r.n_seeds.to_string(),
            r.diagnostic.clone().unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One line per cell: `method,percent,seed,k,mae,diagnostic`.
pub fn write_raw_csv(path: &Path, table: &MaeTable) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "percent", "seed", "k", "mae", "diagnostic"])
        .map_err(|e| csv_err(path, e))?;
    for c in &table.cells {
        w.write_record([
            c.method.clone(),
            fmt_f64(c.percent * 100.0),
            c.seed.to_string(),
            c.k.to_string(),
            fmt_opt(c.mae),
            c.diagnostic.clone().unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `item_id,c0,c1,…`.
pub fn write_coords_csv(path: &Path, item_ids: &[String], coords: &Matrix) -> CliResult<()> {
    if item_ids.len() != coords.rows() {
        return Err(CliError::Runtime(format!(
            "{} item ids for {} coordinate rows",
            item_ids.len(),
            coords.rows()
        )));
    }
    let mut w = writer(path)?;
    let mut header = vec!["item_id".to_string()];
    header.extend((0..coords.cols()).map(|j| format!("c{j}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (id, row) in item_ids.iter().zip(coords.iter_rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|&x| fmt_f64(x)));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
