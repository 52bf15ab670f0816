//! Offline preparation of a cluster: allocate, encode, and write each
//! worker's slice of the encoded matrix to its own directory.
//!
//! Layout under the root directory:
//! `task.bin` (coding metadata sidecar), `allocation.json`, and
//! `worker-<i>/slice.bin` plus `worker-<i>/meta.json` for every worker.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{allocate, Allocation, Scheme};
use crate::coding::{
    encode_dense, encode_lt, encode_systematic_parity, identity_task, lt_threshold, write_matrix_rows, Codec,
    CodedTask, DenseLayout, RowMatrix,
};
use crate::error::{Error, Result};
use crate::model::WorkerProfile;

pub const TASK_FILE: &str = "task.bin";
pub const ALLOCATION_FILE: &str = "allocation.json";
pub const SLICE_FILE: &str = "slice.bin";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvisionOptions {
    pub codec: Codec,
    pub layout: DenseLayout,
    pub epsilon: f64,
}

impl Default for ProvisionOptions {
    fn default() -> Self {
        Self { codec: Codec::Dense, layout: DenseLayout::Gaussian, epsilon: crate::coding::DEFAULT_EPSILON }
    }
}

/// Per-worker metadata stored next to its slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerMeta {
    pub worker_id: usize,
    pub codec: Codec,
    pub row_start: usize,
    pub row_count: usize,
    /// Rows in each batch, in processing order.
    pub batches: Vec<usize>,
    pub r: usize,
    pub q: usize,
    pub profile: WorkerProfile,
}

/// A worker's stored rows and their metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerSlice {
    pub meta: WorkerMeta,
    pub rows: RowMatrix,
}

impl WorkerSlice {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.rows.save(dir.join(SLICE_FILE))?;
        let mut w = BufWriter::new(File::create(dir.join(META_FILE))?);
        serde_json::to_writer_pretty(&mut w, &self.meta)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: WorkerMeta = serde_json::from_reader(BufReader::new(File::open(dir.join(META_FILE))?))?;
        let rows = RowMatrix::load(dir.join(SLICE_FILE))?;
        if rows.rows() != meta.row_count || meta.batches.iter().sum::<usize>() != meta.row_count {
            return Err(Error::Format(format!(
                "slice in {} has {} rows, metadata says {} in batches {:?}",
                dir.display(),
                rows.rows(),
                meta.row_count,
                meta.batches
            )));
        }
        Ok(Self { meta, rows })
    }
}

/// Coding metadata and allocation of a provisioned cluster.
#[derive(Clone, Debug)]
pub struct Provisioned {
    pub task: CodedTask,
    pub allocation: Allocation,
}

pub fn worker_dir(root: impl AsRef<Path>, worker: usize) -> PathBuf {
    root.as_ref().join(format!("worker-{worker}"))
}

/// Encoded rows, borrowing `A` where the code leaves its rows unchanged.
enum EncodedRows<'a> {
    Full(RowMatrix),
    Source(&'a RowMatrix),
    Systematic { a: &'a RowMatrix, parity: RowMatrix },
}

impl EncodedRows<'_> {
    fn row(&self, i: usize) -> &[f64] {
        match self {
            EncodedRows::Full(m) => m.row(i),
            EncodedRows::Source(a) => a.row(i),
            EncodedRows::Systematic { a, parity } => {
                if i < a.rows() {
                    a.row(i)
                } else {
                    parity.row(i - a.rows())
                }
            }
        }
    }
}

fn encode_for<'a, R: Rng + ?Sized>(
    a: &'a RowMatrix,
    scheme: Scheme,
    profiles: &[WorkerProfile],
    options: ProvisionOptions,
    rng: &mut R,
) -> Result<(Provisioned, EncodedRows<'a>)> {
    let r = a.rows();
    let target = match (scheme.is_coded(), options.codec) {
        (true, Codec::Lt) => lt_threshold(r, options.epsilon),
        _ => r,
    };
    let allocation = allocate(scheme, target as u64, profiles)?;
    let q = allocation.total_load() as usize;
    let (mut task, rows) = match (scheme.is_coded(), options.codec, options.layout) {
        (false, _, _) => (identity_task_meta(r), EncodedRows::Source(a)),
        (true, Codec::Dense, DenseLayout::Systematic) => {
            let (task, parity) = encode_systematic_parity(a, q, rng)?;
            (task, EncodedRows::Systematic { a, parity })
        }
        (true, Codec::Dense, DenseLayout::Gaussian) => {
            let (task, full) = encode_dense(a, q, rng)?;
            (task, EncodedRows::Full(full))
        }
        (true, Codec::Lt, _) => {
            let (task, full) = encode_lt(a, q, options.epsilon, rng)?;
            (task, EncodedRows::Full(full))
        }
    };
    task.partition(&allocation)?;
    Ok((Provisioned { task, allocation }, rows))
}

fn identity_task_meta(r: usize) -> CodedTask {
    identity_task(&RowMatrix::zeros(r, 0)).0
}

fn meta_for(task: &CodedTask, worker: usize, profile: WorkerProfile) -> WorkerMeta {
    let range = &task.worker_ranges[worker];
    WorkerMeta {
        worker_id: worker,
        codec: task.codec(),
        row_start: range.start,
        row_count: range.len,
        batches: range.batches.clone(),
        r: task.r,
        q: task.q,
        profile,
    }
}

/// Allocates `A`'s rows under `scheme`, encodes them, and returns each
/// worker's slice in memory.
pub fn prepare<R: Rng + ?Sized>(
    a: &RowMatrix,
    scheme: Scheme,
    profiles: &[WorkerProfile],
    options: ProvisionOptions,
    rng: &mut R,
) -> Result<(Provisioned, Vec<WorkerSlice>)> {
    let (prepared, rows) = encode_for(a, scheme, profiles, options, rng)?;
    let slices = (0..profiles.len())
        .map(|i| {
            let meta = meta_for(&prepared.task, i, profiles[i]);
            let start = meta.row_start;
            let data = RowMatrix::from_fn(meta.row_count, a.cols(), |k, j| rows.row(start + k)[j]);
            WorkerSlice { meta, rows: data }
        })
        .collect();
    Ok((prepared, slices))
}

/// Allocates, encodes, and writes every worker's slice under `root`,
/// streaming rows to disk without materializing all slices at once.
pub fn provision<R: Rng + ?Sized>(
    root: impl AsRef<Path>,
    a: &RowMatrix,
    scheme: Scheme,
    profiles: &[WorkerProfile],
    options: ProvisionOptions,
    rng: &mut R,
) -> Result<Provisioned> {
    let root = root.as_ref();
    let (prepared, rows) = encode_for(a, scheme, profiles, options, rng)?;
    fs::create_dir_all(root)?;
    prepared.task.save_sidecar(root.join(TASK_FILE))?;
    let mut w = BufWriter::new(File::create(root.join(ALLOCATION_FILE))?);
    serde_json::to_writer_pretty(&mut w, &prepared.allocation)?;
    w.flush()?;
    for (i, profile) in profiles.iter().enumerate() {
        let meta = meta_for(&prepared.task, i, *profile);
        write_worker(&worker_dir(root, i), &meta, a.cols(), &rows)
            .map_err(|e| match e {
                Error::Io(source) => Error::WorkerIo { worker: i, source },
                other => other,
            })?;
    }
    Ok(prepared)
}

fn write_worker(dir: &Path, meta: &WorkerMeta, cols: usize, rows: &EncodedRows<'_>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let range = meta.row_start..meta.row_start + meta.row_count;
    write_matrix_rows(
        BufWriter::new(File::create(dir.join(SLICE_FILE))?),
        meta.row_count,
        cols,
        range.map(|i| rows.row(i)),
    )?;
    let mut w = BufWriter::new(File::create(dir.join(META_FILE))?);
    serde_json::to_writer_pretty(&mut w, meta)?;
    w.flush()?;
    Ok(())
}

/// Reads the coding metadata written by [`provision`].
pub fn load_task(root: impl AsRef<Path>) -> Result<CodedTask> {
    CodedTask::load_sidecar(root.as_ref().join(TASK_FILE))
}
