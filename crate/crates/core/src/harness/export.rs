use std::fs;
use std::path::{Path, PathBuf};

use super::AggregateReport;
use crate::error::{OsarError, Result};

/// Columns preceding the per-source input shares.
pub const CSV_FIXED_COLUMNS: [&str; 3] = ["budget", "pcs", "se"];

fn csv_err(e: csv::Error) -> OsarError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => OsarError::Io(io),
        other => OsarError::Numerical(format!("csv: {other:?}")),
    }
}

/// One row per budget gridpoint: budget, PCS, its standard error, then the mean β per source.
pub fn write_csv(report: &AggregateReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let l = report.mean_beta.len();
    let mut header: Vec<String> = CSV_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=l).map(|j| format!("beta_{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for p in &report.curve {
        let mut rec = vec![p.budget.to_string(), p.pcs.to_string(), p.se.to_string()];
        rec.extend(p.beta.iter().map(|b| b.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(report: &AggregateReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<AggregateReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Write `curve.csv` and `report.json` into `dir`, creating it if needed.
pub fn export(report: &AggregateReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("curve.csv");
    let json_path = dir.join("report.json");
    write_csv(report, &csv_path)?;
    write_json(report, &json_path)?;
    Ok((csv_path, json_path))
}
