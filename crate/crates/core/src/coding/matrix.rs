//! Row-major `f64` matrices and their on-disk format: a 16-byte header
//! (`BPCCMAT\0`, rows as `u32` LE, cols as `u32` LE) followed by row-major
//! little-endian 8-byte floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: [u8; 8] = *b"BPCCMAT\0";
pub const HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidParameter(format!(
                "matrix data has {} entries, expected {rows} x {cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn slice_rows(&self, range: Range<usize>) -> RowMatrix {
        RowMatrix {
            rows: range.len(),
            cols: self.cols,
            data: self.data[range.start * self.cols..range.end * self.cols].to_vec(),
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(mut self, other: &RowMatrix) -> Result<RowMatrix> {
        if self.cols != other.cols {
            return Err(Error::InvalidParameter("column mismatch in vstack".into()));
        }
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
        Ok(self)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "vector length must match column count");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self * other` through a blocked GEMM kernel.
    pub fn matmul(&self, other: &RowMatrix) -> Result<RowMatrix> {
        if self.cols != other.rows {
            return Err(Error::InvalidParameter(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = RowMatrix::zeros(self.rows, other.cols);
        if self.rows == 0 || other.cols == 0 || self.cols == 0 {
            return Ok(out);
        }
        // SAFETY: all three buffers are row-major with the stated dimensions
        // and strides, and `out` does not alias the inputs.
        unsafe {
            matrixmultiply::dgemm(
                self.rows,
                self.cols,
                other.cols,
                1.0,
                self.data.as_ptr(),
                self.cols as isize,
                1,
                other.data.as_ptr(),
                other.cols as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                out.cols as isize,
                1,
            );
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        write_matrix_rows(w, self.rows, self.cols, (0..self.rows).map(|i| self.row(i)))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)?;
        if header[..8] != MATRIX_MAGIC {
            return Err(Error::Format("bad matrix magic".into()));
        }
        let rows = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
        let cols = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes")) as usize;
        let data = read_f64s(&mut r, rows * cols)?;
        Ok(Self { rows, cols, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Writes a matrix in the on-disk format from an iterator over its rows.
pub fn write_matrix_rows<'a, W: Write>(
    mut w: W,
    rows: usize,
    cols: usize,
    row_iter: impl Iterator<Item = &'a [f64]>,
) -> Result<()> {
    let n = u32::try_from(rows).map_err(|_| Error::Format("too many rows".into()))?;
    let m = u32::try_from(cols).map_err(|_| Error::Format("too many columns".into()))?;
    let mut header = [0u8; HEADER_LEN];
    header[..8].copy_from_slice(&MATRIX_MAGIC);
    header[8..12].copy_from_slice(&n.to_le_bytes());
    header[12..16].copy_from_slice(&m.to_le_bytes());
    w.write_all(&header)?;
    let mut written = 0;
    for row in row_iter {
        if row.len() != cols {
            return Err(Error::Format(format!("row of length {} in a {cols}-column matrix", row.len())));
        }
        write_f64s(&mut w, row)?;
        written += 1;
    }
    if written != rows {
        return Err(Error::Format(format!("wrote {written} rows, header says {rows}")));
    }
    w.flush()?;
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * values.len().min(1 << 16));
    for chunk in values.chunks(1 << 16) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0u8; 8 * count.min(1 << 16)];
    let mut remaining = count;
    while remaining > 0 {
        let n = remaining.min(1 << 16);
        let bytes = &mut buf[..8 * n];
        r.read_exact(bytes)?;
        out.extend(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))));
        remaining -= n;
    }
    Ok(out)
}

pub(crate) fn f64s_from_le(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect()
}
