//! Flat outputs: `record.json`, `rows.csv`, `residuals.csv` and the sweep
//! table. Headers are fixed; tests pin them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::run::RunRecord;
use super::sweep::SweepRow;
use crate::error::Result;
use crate::metrics::ResidualTrace;

pub const ROWS_HEADER: [&str; 10] = [
    "d",
    "δ",
    "implementation",
    "mode",
    "sequential_rounds",
    "total_score_evals",
    "max_parallel_width",
    "KL",
    "W2",
    "wall_clock",
];

pub const RESIDUALS_HEADER: [&str; 3] = ["block", "iteration", "residual"];

pub const SWEEP_HEADER: [&str; 12] = [
    "d",
    "δ",
    "status",
    "min_K",
    "M",
    "sequential_rounds",
    "total_score_evals",
    "memory",
    "final_residual",
    "M_theorem1",
    "M_theorem2",
    "wall_clock",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

/// One `rows.csv` line per record.
pub fn row_fields(r: &RunRecord) -> [String; 10] {
    [
        r.d.to_string(),
        opt(r.delta),
        r.config.implementation.name().to_string(),
        r.config.mode.to_string(),
        r.report.sequential_rounds.to_string(),
        r.report.total_score_evals.to_string(),
        r.report.max_parallel_width.to_string(),
        opt(r.kl()),
        opt(r.w2()),
        format!("{:.6}", r.report.wall_clock),
    ]
}

pub fn write_rows(path: &Path, records: &[&RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ROWS_HEADER)?;
    for r in records {
        w.write_record(row_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Per-block residual of the first sample path after each sweep (1-based).
pub fn write_residuals(path: &Path, record: &RunRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESIDUALS_HEADER)?;
    for (block, k, r) in ResidualTrace::from_path(&record.report).rows() {
        w.write_record([block.to_string(), k.to_string(), format!("{r:e}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes `record.json`, `rows.csv` and `residuals.csv` into `dir`.
pub fn write_run(dir: &Path, record: &RunRecord) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("record.json"), record)?;
    write_rows(&dir.join("rows.csv"), &[record])?;
    write_residuals(&dir.join("residuals.csv"), record)
}

pub fn sweep_fields(row: &SweepRow) -> [String; 12] {
    let num = |v: Option<usize>| v.map_or_else(String::new, |x| x.to_string());
    [
        row.d.to_string(),
        opt(row.delta),
        row.status.to_string(),
        num(row.min_depth),
        num(row.steps),
        row.record.as_ref().map_or_else(String::new, |r| r.report.sequential_rounds.to_string()),
        row.record.as_ref().map_or_else(String::new, |r| r.report.total_score_evals.to_string()),
        num(row.memory),
        opt(row.final_residual),
        num(row.steps_theorem1),
        num(row.steps_theorem2),
        format!("{:.6}", row.wall_clock),
    ]
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record(sweep_fields(r))?;
    }
    w.flush()?;
    Ok(())
}
