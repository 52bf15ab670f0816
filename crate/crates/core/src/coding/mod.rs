//! Row coding of `A` into `A_hat = H A`, partitioning of the encoded rows into
//! per-worker batches, and recovery of `y = A x` from returned partial results.

mod lt;
mod matrix;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use lt::{generate_neighbors, DegreeDistribution, Peeler, RobustSolitonParams};
pub use matrix::{dot, write_matrix_rows, RowMatrix, HEADER_LEN, MATRIX_MAGIC};
pub(crate) use matrix::f64s_from_le;

use crate::allocation::Allocation;
use crate::error::{Error, Result};
use crate::model::batch_rows;

pub const DEFAULT_EPSILON: f64 = 0.13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Codec {
    Dense,
    Lt,
}

/// How the rows of a dense generator are laid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseLayout {
    /// Every entry of `H` is an independent standard normal.
    Gaussian,
    /// `H = [I; G]` with `G` Gaussian: the first `r` encoded rows are `A`.
    Systematic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "codec", rename_all = "snake_case")]
pub enum RowMeta {
    Dense {
        layout: DenseLayout,
        /// For `Gaussian`, all `q` rows of `H`; for `Systematic`, only the
        /// `q - r` rows of `G`.
        coefficients: RowMatrix,
    },
    Lt {
        epsilon: f64,
        neighbors: Vec<Vec<u32>>,
    },
}

/// One worker's contiguous slice of encoded rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerRange {
    pub start: usize,
    pub len: usize,
    /// Rows in each batch, in processing order.
    pub batches: Vec<usize>,
}

impl WorkerRange {
    pub fn rows(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    /// Global encoded-row range of batch `k`.
    pub fn batch_range(&self, k: usize) -> Range<usize> {
        let offset: usize = self.batches[..k].iter().sum();
        let start = self.start + offset;
        start..start + self.batches[k]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodedTask {
    pub r: usize,
    pub q: usize,
    pub meta: RowMeta,
    pub worker_ranges: Vec<WorkerRange>,
}

impl CodedTask {
    pub fn codec(&self) -> Codec {
        match self.meta {
            RowMeta::Dense { .. } => Codec::Dense,
            RowMeta::Lt { .. } => Codec::Lt,
        }
    }

    /// Rows needed before decoding is attempted: `r` for dense codes,
    /// `ceil(r (1 + epsilon))` for LT codes.
    pub fn recovery_threshold(&self) -> usize {
        match &self.meta {
            RowMeta::Dense { .. } => self.r,
            RowMeta::Lt { epsilon, .. } => lt_threshold(self.r, *epsilon),
        }
    }

    /// Assigns contiguous slices of the encoded rows to workers following
    /// the allocation's loads and batch counts.
    pub fn partition(&mut self, alloc: &Allocation) -> Result<()> {
        let total = alloc.total_load() as usize;
        if total != self.q {
            return Err(Error::InvalidAllocation(format!(
                "allocation covers {total} rows, task has q = {}",
                self.q
            )));
        }
        let mut start = 0;
        self.worker_ranges = alloc
            .loads
            .iter()
            .zip(&alloc.batches)
            .map(|(&load, &p)| {
                let batches = batch_rows(load, p)?.into_iter().map(|b| b as usize).collect();
                let range = WorkerRange { start, len: load as usize, batches };
                start += load as usize;
                Ok(range)
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn save_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_sidecar(BufWriter::new(File::create(path)?))
    }

    pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_sidecar(BufReader::new(File::open(path)?))
    }

    /// Binary sidecar: `BPCCTASK`, then little-endian `u64` counts, worker
    /// ranges and codec metadata (see `read_sidecar` for the exact order).
    pub fn write_sidecar<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TASK_MAGIC)?;
        put_u64(&mut w, self.r as u64)?;
        put_u64(&mut w, self.q as u64)?;
        put_u64(&mut w, self.worker_ranges.len() as u64)?;
        for range in &self.worker_ranges {
            put_u64(&mut w, range.start as u64)?;
            put_u64(&mut w, range.len as u64)?;
            put_u64(&mut w, range.batches.len() as u64)?;
            for &b in &range.batches {
                put_u64(&mut w, b as u64)?;
            }
        }
        match &self.meta {
            RowMeta::Dense { layout, coefficients } => {
                w.write_all(&[0, matches!(layout, DenseLayout::Systematic) as u8])?;
                coefficients.write_to(&mut w)?;
            }
            RowMeta::Lt { epsilon, neighbors } => {
                w.write_all(&[1, 0])?;
                w.write_all(&epsilon.to_le_bytes())?;
                put_u64(&mut w, neighbors.len() as u64)?;
                for set in neighbors {
                    put_u64(&mut w, set.len() as u64)?;
                    for &s in set {
                        w.write_all(&s.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_sidecar<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TASK_MAGIC {
            return Err(Error::Format("bad task sidecar magic".into()));
        }
        let rows = get_u64(&mut r)? as usize;
        let q = get_u64(&mut r)? as usize;
        let workers = get_u64(&mut r)? as usize;
        let mut worker_ranges = Vec::with_capacity(workers.min(1 << 16));
        for _ in 0..workers {
            let start = get_u64(&mut r)? as usize;
            let len = get_u64(&mut r)? as usize;
            let n = get_u64(&mut r)? as usize;
            let batches = (0..n).map(|_| get_u64(&mut r).map(|b| b as usize)).collect::<Result<_>>()?;
            worker_ranges.push(WorkerRange { start, len, batches });
        }
        let mut tag = [0u8; 2];
        r.read_exact(&mut tag)?;
        let meta = match tag {
            [0, s] => RowMeta::Dense {
                layout: if s == 1 { DenseLayout::Systematic } else { DenseLayout::Gaussian },
                coefficients: RowMatrix::read_from(&mut r)?,
            },
            [1, _] => {
                let mut eps = [0u8; 8];
                r.read_exact(&mut eps)?;
                let count = get_u64(&mut r)? as usize;
                let mut neighbors = Vec::with_capacity(count.min(1 << 20));
                for _ in 0..count {
                    let d = get_u64(&mut r)? as usize;
                    let mut set = Vec::with_capacity(d.min(1 << 20));
                    for _ in 0..d {
                        let mut b = [0u8; 4];
                        r.read_exact(&mut b)?;
                        set.push(u32::from_le_bytes(b));
                    }
                    neighbors.push(set);
                }
                RowMeta::Lt { epsilon: f64::from_le_bytes(eps), neighbors }
            }
            _ => return Err(Error::Format("unknown codec tag".into())),
        };
        Ok(Self { r: rows, q, meta, worker_ranges })
    }
}

const TASK_MAGIC: &[u8; 8] = b"BPCCTASK";

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn lt_threshold(r: usize, epsilon: f64) -> usize {
    ((r as f64 * (1.0 + epsilon)) - 1e-9).ceil().max(r as f64) as usize
}

/// Gaussian dense code: `H` is `q x r` with independent standard normals.
pub fn encode_dense<R: Rng + ?Sized>(a: &RowMatrix, q: usize, rng: &mut R) -> Result<(CodedTask, RowMatrix)> {
    encode_dense_with(a, q, DenseLayout::Gaussian, rng)
}

pub fn encode_dense_with<R: Rng + ?Sized>(
    a: &RowMatrix,
    q: usize,
    layout: DenseLayout,
    rng: &mut R,
) -> Result<(CodedTask, RowMatrix)> {
    let r = a.rows();
    if q < r {
        return Err(Error::InsufficientRedundancy { q, r });
    }
    let (coefficients, encoded) = match layout {
        DenseLayout::Gaussian => {
            let h = RowMatrix::gaussian(q, r, rng);
            let encoded = h.matmul(a)?;
            (h, encoded)
        }
        DenseLayout::Systematic => {
            let (task, parity) = encode_systematic_parity(a, q, rng)?;
            return Ok((task, a.clone().vstack(&parity)?));
        }
    };
    let task = CodedTask { r, q, meta: RowMeta::Dense { layout, coefficients }, worker_ranges: Vec::new() };
    Ok((task, encoded))
}

/// Systematic code `[I; G]` returning only the `q - r` parity rows `G A`;
/// encoded row `i < r` is row `i` of `A` itself.
pub fn encode_systematic_parity<R: Rng + ?Sized>(
    a: &RowMatrix,
    q: usize,
    rng: &mut R,
) -> Result<(CodedTask, RowMatrix)> {
    let r = a.rows();
    if q < r {
        return Err(Error::InsufficientRedundancy { q, r });
    }
    let g = RowMatrix::gaussian(q - r, r, rng);
    let parity = g.matmul(a)?;
    let task = CodedTask {
        r,
        q,
        meta: RowMeta::Dense { layout: DenseLayout::Systematic, coefficients: g },
        worker_ranges: Vec::new(),
    };
    Ok((task, parity))
}

/// Encodes with explicit generator rows (`q x r`), e.g. an identity block.
pub fn encode_dense_from(a: &RowMatrix, h: RowMatrix) -> Result<(CodedTask, RowMatrix)> {
    if h.cols() != a.rows() {
        return Err(Error::InvalidParameter("generator width must equal r".into()));
    }
    if h.rows() < a.rows() {
        return Err(Error::InsufficientRedundancy { q: h.rows(), r: a.rows() });
    }
    let encoded = h.matmul(a)?;
    let task = CodedTask {
        r: a.rows(),
        q: h.rows(),
        meta: RowMeta::Dense { layout: DenseLayout::Gaussian, coefficients: h },
        worker_ranges: Vec::new(),
    };
    Ok((task, encoded))
}

/// Uncoded task: `A_hat = A`, every row is needed.
pub fn identity_task(a: &RowMatrix) -> (CodedTask, RowMatrix) {
    let task = CodedTask {
        r: a.rows(),
        q: a.rows(),
        meta: RowMeta::Dense { layout: DenseLayout::Systematic, coefficients: RowMatrix::zeros(0, a.rows()) },
        worker_ranges: Vec::new(),
    };
    (task, a.clone())
}

pub fn encode_lt<R: Rng + ?Sized>(
    a: &RowMatrix,
    q_cap: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<(CodedTask, RowMatrix)> {
    let dist = DegreeDistribution::robust_soliton(a.rows(), RobustSolitonParams::default())?;
    encode_lt_with(a, q_cap, epsilon, &dist, rng)
}

pub fn encode_lt_with<R: Rng + ?Sized>(
    a: &RowMatrix,
    q_cap: usize,
    epsilon: f64,
    dist: &DegreeDistribution,
    rng: &mut R,
) -> Result<(CodedTask, RowMatrix)> {
    let r = a.rows();
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let threshold = lt_threshold(r, epsilon);
    if q_cap < threshold {
        return Err(Error::InsufficientRedundancy { q: q_cap, r: threshold });
    }
    let neighbors = generate_neighbors(r, q_cap, dist, rng);
    let mut encoded = RowMatrix::zeros(q_cap, a.cols());
    for (j, set) in neighbors.iter().enumerate() {
        let out = encoded.row_mut(j);
        for &s in set {
            for (o, v) in out.iter_mut().zip(a.row(s as usize)) {
                *o += v;
            }
        }
    }
    let task = CodedTask { r, q: q_cap, meta: RowMeta::Lt { epsilon, neighbors }, worker_ranges: Vec::new() };
    Ok((task, encoded))
}

/// Inner products of one batch of encoded rows with `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialResult {
    pub worker_id: usize,
    pub batch_index: usize,
    pub row_start: usize,
    pub values: Vec<f64>,
}

impl PartialResult {
    pub fn rows(&self) -> Range<usize> {
        self.row_start..self.row_start + self.values.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DecodeStatus {
    Decoded(Vec<f64>),
    Insufficient { received: usize, needed: usize },
}

impl DecodeStatus {
    pub fn into_result(self) -> Option<Vec<f64>> {
        match self {
            DecodeStatus::Decoded(y) => Some(y),
            DecodeStatus::Insufficient { .. } => None,
        }
    }
}

/// Accepts partial results in arrival order and recovers `y` once enough rows
/// are in. LT peeling state carries over between calls.
#[derive(Clone, Debug)]
pub struct Decoder<'a> {
    task: &'a CodedTask,
    seen: Vec<bool>,
    arrivals: Vec<(usize, f64)>,
    peeler: Option<Peeler>,
}

const MAX_RESAMPLES: usize = 3;

impl<'a> Decoder<'a> {
    pub fn new(task: &'a CodedTask) -> Self {
        let peeler = matches!(task.meta, RowMeta::Lt { .. }).then(|| Peeler::new(task.r));
        Self { task, seen: vec![false; task.q], arrivals: Vec::new(), peeler }
    }

    pub fn received(&self) -> usize {
        self.arrivals.len()
    }

    pub fn push(&mut self, part: &PartialResult) -> Result<()> {
        let rows = part.rows();
        if rows.end > self.task.q {
            return Err(Error::InvalidParameter(format!(
                "rows {rows:?} exceed q = {}",
                self.task.q
            )));
        }
        if let Some(range) = self.task.worker_ranges.get(part.worker_id) {
            let slice = range.rows();
            if rows.start < slice.start || rows.end > slice.end {
                return Err(Error::InvalidParameter(format!(
                    "rows {rows:?} outside worker {} slice {slice:?}",
                    part.worker_id
                )));
            }
        }
        for (row, &value) in rows.zip(&part.values) {
            if std::mem::replace(&mut self.seen[row], true) {
                continue;
            }
            self.arrivals.push((row, value));
            if let (Some(peeler), RowMeta::Lt { neighbors, .. }) = (self.peeler.as_mut(), &self.task.meta) {
                peeler.push(&neighbors[row], value);
            }
        }
        Ok(())
    }

    pub fn try_decode(&mut self) -> Result<DecodeStatus> {
        let needed = self.task.recovery_threshold();
        let received = self.arrivals.len();
        if received < needed {
            return Ok(DecodeStatus::Insufficient { received, needed });
        }
        match &self.task.meta {
            RowMeta::Lt { .. } => {
                let peeler = self.peeler.as_ref().expect("LT decoder has a peeler");
                Ok(match peeler.values() {
                    Some(v) => DecodeStatus::Decoded(v.to_vec()),
                    None => DecodeStatus::Insufficient { received, needed: received + 1 },
                })
            }
            RowMeta::Dense { layout, coefficients } => {
                let r = self.task.r;
                let first: Vec<(usize, f64)> = self.arrivals[..r].to_vec();
                if let Some(y) = solve_dense(r, *layout, coefficients, &first)? {
                    return Ok(DecodeStatus::Decoded(y));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(received as u64);
                for _ in 0..MAX_RESAMPLES {
                    let pick: Vec<(usize, f64)> = index::sample(&mut rng, received, r)
                        .into_iter()
                        .map(|i| self.arrivals[i])
                        .collect();
                    if let Some(y) = solve_dense(r, *layout, coefficients, &pick)? {
                        return Ok(DecodeStatus::Decoded(y));
                    }
                }
                Err(Error::DecodeFailure(format!(
                    "coefficient submatrix singular after {MAX_RESAMPLES} resamples"
                )))
            }
        }
    }
}

/// Solves for `y` from exactly `r` encoded rows. Returns `None` when the
/// selected rows are numerically singular.
fn solve_dense(
    r: usize,
    layout: DenseLayout,
    coefficients: &RowMatrix,
    rows: &[(usize, f64)],
) -> Result<Option<Vec<f64>>> {
    debug_assert_eq!(rows.len(), r);
    match layout {
        DenseLayout::Gaussian => {
            let h = DMatrix::from_fn(r, r, |i, j| coefficients.get(rows[i].0, j));
            let rhs = DVector::from_iterator(r, rows.iter().map(|&(_, v)| v));
            Ok(lu_solve(h, rhs).map(|v| v.as_slice().to_vec()))
        }
        DenseLayout::Systematic => {
            let mut y = vec![0.0; r];
            let mut known = vec![false; r];
            let mut parity = Vec::new();
            for &(row, value) in rows {
                if row < r {
                    y[row] = value;
                    known[row] = true;
                } else {
                    parity.push((row - r, value));
                }
            }
            let missing: Vec<usize> = (0..r).filter(|&i| !known[i]).collect();
            if missing.is_empty() {
                return Ok(Some(y));
            }
            // G[p, missing] y_missing = value_p - G[p, known] y_known
            let k = missing.len();
            let g = DMatrix::from_fn(k, k, |i, j| coefficients.get(parity[i].0, missing[j]));
            let rhs = DVector::from_iterator(
                k,
                parity.iter().map(|&(p, value)| {
                    let row = coefficients.row(p);
                    value - (0..r).filter(|&j| known[j]).map(|j| row[j] * y[j]).sum::<f64>()
                }),
            );
            Ok(lu_solve(g, rhs).map(|sol| {
                for (&m, v) in missing.iter().zip(sol.iter()) {
                    y[m] = *v;
                }
                y
            }))
        }
    }
}

fn lu_solve(m: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    let n = m.nrows();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let lu = m.lu();
    let u = lu.u();
    let min_pivot = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if min_pivot.is_nan() || min_pivot <= 1e-13 * scale * n as f64 {
        return None;
    }
    lu.solve(&rhs)
}

/// Decodes from a complete set of partial results.
pub fn decode(task: &CodedTask, parts: &[PartialResult]) -> Result<DecodeStatus> {
    let mut decoder = Decoder::new(task);
    for part in parts {
        decoder.push(part)?;
    }
    decoder.try_decode()
}

/// Splits a worker's encoded rows into one partial result per batch.
pub fn worker_partials(task: &CodedTask, encoded: &RowMatrix, worker: usize, x: &[f64]) -> Vec<PartialResult> {
    let range = &task.worker_ranges[worker];
    (0..range.batches.len())
        .map(|k| {
            let rows = range.batch_range(k);
            PartialResult {
                worker_id: worker,
                batch_index: k,
                row_start: rows.start,
                values: rows.map(|i| dot(encoded.row(i), x)).collect(),
            }
        })
        .collect()
}
