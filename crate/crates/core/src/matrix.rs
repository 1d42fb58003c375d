//! Dense row-major embedding matrices and the few vector kernels the toolkit needs.

use crate::error::{Error, Result};
use crate::npy::{self, Dtype, NpyArray};
use std::path::Path;

/// An `N x d` row-major matrix of finite values, one embedding per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::EmptySet("matrix has no rows".into()));
        }
        if cols == 0 {
            return Err(Error::Degenerate("matrix has no columns".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dims(cols, r.len(), format!("row {i}")));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
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

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    /// Keeps the listed columns, in the listed order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Degenerate("no columns selected".into()));
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.cols) {
            return Err(Error::OutOfRange(format!(
                "column {bad} outside a {}-column matrix",
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * columns.len());
        for row in self.iter_rows() {
            data.extend(columns.iter().map(|&c| row[c]));
        }
        Ok(Self {
            rows: self.rows,
            cols: columns.len(),
            data,
        })
    }

    /// Stacks matrices vertically; all parts must share a column count.
    pub fn vstack(parts: &[&EmbeddingMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptySet("nothing to stack".into()))?;
        let cols = first.cols;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            if p.cols != cols {
                return Err(Error::dims(cols, p.cols, "vstack"));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            rows: data.len() / cols,
            cols,
            data,
        })
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.rows {
            return Err(Error::OutOfRange(format!(
                "row range {start}..{end} of a {}-row matrix",
                self.rows
            )));
        }
        Ok(Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        })
    }

    /// Column means.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn map_rows(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = self.iter_rows().map(f).collect();
        Self::from_rows(&rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_matrix(path)
    }

    pub fn save(&self, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
        npy::write_npy(path, &[self.rows, self.cols], &self.data, dtype)
    }
}

impl TryFrom<NpyArray> for EmbeddingMatrix {
    type Error = Error;

    fn try_from(arr: NpyArray) -> Result<Self> {
        arr.expect_rank(2)?;
        arr.check_finite()?;
        EmbeddingMatrix::new(arr.shape[0], arr.shape[1], arr.data)
    }
}

/// Loads a 2-D floating point NPY file into working precision.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::try_from(npy::read_npy(path)?)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit-normalizes `v`; `None` for the zero vector.
pub fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / n).collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}
