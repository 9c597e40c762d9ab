use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

/// An n x p observation matrix, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    columns: Vec<String>,
}

impl DataMatrix {
    /// Wraps a matrix, naming the columns `x1..xp`. Every entry must be finite.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let columns = (1..=values.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_columns(values, columns)
    }

    pub fn with_columns(values: DMatrix<f64>, columns: Vec<String>) -> Result<Self> {
        if columns.len() != values.ncols() {
            return Err(Error::DimensionMismatch {
                expected: values.ncols(),
                found: columns.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::invalid(format!("non-finite value at row {r}, column {c}")));
        }
        Ok(Self { values, columns })
    }

    /// Builds from row vectors; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::invalid(format!(
                "row {i} has {} columns, expected {p}",
                r.len()
            )));
        }
        let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(values)
    }

    pub(crate) fn from_matrix_unchecked(values: DMatrix<f64>) -> Self {
        let columns = (1..=values.ncols()).map(|j| format!("x{j}")).collect();
        Self { values, columns }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Row `i` as a column vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    pub fn rows(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        (0..self.nrows()).map(move |i| self.row(i))
    }

    /// Rows `x` mapped to `a x + b`.
    pub fn affine(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        if a.ncols() != self.ncols() || b.len() != a.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                found: a.ncols(),
            });
        }
        let mut out = &self.values * a.transpose();
        for mut row in out.row_iter_mut() {
            row += b.transpose();
        }
        Ok(Self::from_matrix_unchecked(out))
    }

    /// Subset of rows in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let rows: Vec<RowDVector<f64>> = idx.iter().map(|&i| self.values.row(i).into()).collect();
        let values = if rows.is_empty() {
            DMatrix::zeros(0, self.ncols())
        } else {
            DMatrix::from_rows(&rows)
        };
        Self {
            values,
            columns: self.columns.clone(),
        }
    }

    pub(crate) fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                found: v.len(),
            });
        }
        Ok(())
    }
}
