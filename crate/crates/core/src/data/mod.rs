//! Row-sparse example matrices with ±1 labels.

mod libsvm;
mod synthetic;

pub use libsvm::{parse_libsvm, read_libsvm_file, write_libsvm, ParseOptions};
pub use synthetic::{
    make_quadratic, make_quadratic_sized, make_synthetic_logistic, SyntheticProblem,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: feature indices must be strictly increasing ({prev} then {next})")]
    NonIncreasing { line: usize, prev: usize, next: usize },
    #[error("line {line}: label `{label}` is not accepted")]
    Label { line: usize, label: String },
    #[error("line {line}: feature index {index} exceeds dimension {dim}")]
    IndexOutOfRange { line: usize, index: usize, dim: usize },
    #[error("row has {indices} indices but {values} values")]
    RowShape { indices: usize, values: usize },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

/// A borrowed sparse row: parallel index/value slices, indices strictly increasing.
#[derive(Debug, Clone, Copy)]
pub struct Row<'a> {
    pub indices: &'a [usize],
    pub values: &'a [f64],
}

impl Row<'_> {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(self.values)
            .map(|(&j, &v)| v * x[j])
            .sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// n × d example matrix in compressed-row form, with one ±1 label per row.
///
/// Indices are 0-based in memory. Rows are immutable once the dataset is
/// built, so a `Dataset` can be shared freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    row_ptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Dataset {
            row_ptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
            labels: Vec::new(),
            dim,
        }
    }

    /// Appends a row. `entries` must have strictly increasing indices below `dim`
    /// and the label must be ±1.
    pub fn push_row(&mut self, entries: &[(usize, f64)], label: f64) -> Result<(), DataError> {
        let line = self.n() + 1;
        if label != 1.0 && label != -1.0 {
            return Err(DataError::Label {
                line,
                label: label.to_string(),
            });
        }
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(DataError::NonIncreasing {
                    line,
                    prev: w[0].0,
                    next: w[1].0,
                });
            }
        }
        if let Some(&(j, _)) = entries.last() {
            if j >= self.dim {
                return Err(DataError::IndexOutOfRange {
                    line,
                    index: j,
                    dim: self.dim,
                });
            }
        }
        for &(j, v) in entries {
            self.indices.push(j);
            self.values.push(v);
        }
        self.row_ptr.push(self.indices.len());
        self.labels.push(label);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Fraction of stored entries, `nnz / (n·d)`; 0 for an empty matrix.
    pub fn density(&self) -> f64 {
        let cells = self.n() as f64 * self.dim as f64;
        if cells == 0.0 {
            0.0
        } else {
            self.nnz() as f64 / cells
        }
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        Row {
            indices: &self.indices[lo..hi],
            values: &self.values[lo..hi],
        }
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> + '_ {
        (0..self.n()).map(move |i| self.row(i))
    }

    /// Largest squared row norm, `max_i ‖a_i‖²`.
    pub fn max_row_sq_norm(&self) -> f64 {
        self.rows().map(|r| r.sq_norm()).fold(0.0, f64::max)
    }

    /// Dataset made of the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.dim);
        for &i in rows {
            let r = self.row(i);
            out.indices.extend_from_slice(r.indices);
            out.values.extend_from_slice(r.values);
            out.row_ptr.push(out.indices.len());
            out.labels.push(self.labels[i]);
        }
        out
    }
}
