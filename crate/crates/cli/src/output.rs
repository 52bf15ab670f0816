//! CSV outputs. Every file is written whole with a header row first:
//!
//! | file        | columns                                   |
//! |-------------|-------------------------------------------|
//! | compare     | `scheme,mean_time,success_rate`           |
//! | trace       | `time,mean_rows,scheme`                   |
//! | sweep       | `p,tau_star,mean_time,total_load`         |
//! | sensitivity | `delta,which,relative_change`             |
//! | samples     | `task_size,duration_seconds` (input)      |
//!
//! Floats use the shortest representation that round-trips. A scheme with
//! no successful trial has `mean_time` written as `inf`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use bpcc_core::allocation::Scheme;
use bpcc_core::sim::{Perturbed, SweepRow};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub scheme: Scheme,
    pub mean_time: Option<f64>,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub mean_rows: f64,
    pub scheme: Scheme,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityRow {
    pub delta: f64,
    pub which: Perturbed,
    pub relative_change: f64,
}

pub const COMPARE_HEADER: [&str; 3] = ["scheme", "mean_time", "success_rate"];
pub const TRACE_HEADER: [&str; 3] = ["time", "mean_rows", "scheme"];
pub const SWEEP_HEADER: [&str; 4] = ["p", "tau_star", "mean_time", "total_load"];
pub const SENSITIVITY_HEADER: [&str; 3] = ["delta", "which", "relative_change"];

fn mean(t: Option<f64>) -> String {
    t.unwrap_or(f64::INFINITY).to_string()
}

fn write_csv<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

pub fn write_compare(path: &Path, rows: &[CompareRow]) -> CliResult<()> {
    write_csv(
        path,
        COMPARE_HEADER,
        rows.iter().map(|r| [r.scheme.to_string(), mean(r.mean_time), r.success_rate.to_string()]),
    )
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> CliResult<()> {
    write_csv(
        path,
        TRACE_HEADER,
        rows.iter().map(|r| [r.time.to_string(), r.mean_rows.to_string(), r.scheme.to_string()]),
    )
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> CliResult<()> {
    write_csv(
        path,
        SWEEP_HEADER,
        rows.iter()
            .map(|r| [r.p.to_string(), r.tau_star.to_string(), mean(r.mean_time), r.total_load.to_string()]),
    )
}

pub fn write_sensitivity(path: &Path, rows: &[SensitivityRow]) -> CliResult<()> {
    write_csv(
        path,
        SENSITIVITY_HEADER,
        rows.iter().map(|r| [r.delta.to_string(), r.which.to_string(), r.relative_change.to_string()]),
    )
}

#[derive(Deserialize)]
struct SampleRecord {
    task_size: u64,
    duration_seconds: f64,
}

/// Reads `(task_size, duration)` pairs from a `task_size,duration_seconds` CSV.
pub fn read_samples(path: &Path) -> CliResult<Vec<(u64, f64)>> {
    let file = File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut reader = csv::Reader::from_reader(file);
    reader
        .deserialize::<SampleRecord>()
        .map(|r| {
            r.map(|s| (s.task_size, s.duration_seconds))
                .map_err(|e| CliError::from(e).with_context(path))
        })
        .collect()
}

impl CliError {
    fn with_context(self, path: &Path) -> Self {
        match self {
            CliError::Schema(m) => CliError::Schema(format!("{}: {m}", path.display())),
            other => other,
        }
    }
}
