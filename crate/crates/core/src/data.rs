use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// `n × p` matrix of observations (one row per observation) with column labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix<T: Real> {
    values: DMatrix<T>,
    column_names: Vec<String>,
}

impl<T: Real> DataMatrix<T> {
    /// Requires `n > p ≥ 1`, finite values and one name per column.
    pub fn new(values: DMatrix<T>, column_names: Vec<String>) -> Result<Self> {
        let (n, p) = values.shape();
        if p == 0 {
            return Err(Error::Size("data must have at least one column".into()));
        }
        if n <= p {
            return Err(Error::Size(format!(
                "need more observations than variables, got n = {n}, p = {p}"
            )));
        }
        if column_names.len() != p {
            return Err(Error::Size(format!(
                "{} column names for {p} columns",
                column_names.len()
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (row, col) = (idx % n, idx / n);
            return Err(Error::InvalidArgument(format!(
                "non-finite value at row {}, column {}",
                row + 1,
                col + 1
            )));
        }
        Ok(Self {
            values,
            column_names,
        })
    }

    /// Columns are named `x1..xp`.
    pub fn from_matrix(values: DMatrix<T>) -> Result<Self> {
        let names = default_names(values.ncols());
        Self::new(values, names)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Size(format!(
                "row {} has {} values, expected {p}",
                i + 1,
                rows[i].len()
            )));
        }
        Self::from_matrix(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn row(&self, i: usize) -> DVector<T> {
        self.values.row(i).transpose()
    }

    /// Data with every observation mapped to `A y + b`.
    pub fn affine_map(&self, a: &DMatrix<T>, b: &DVector<T>) -> Result<Self> {
        let p = self.p();
        if a.shape() != (p, p) || b.len() != p {
            return Err(Error::Size(format!(
                "affine map must be {p}×{p} with a length-{p} shift"
            )));
        }
        let mut values = &self.values * a.transpose();
        for mut row in values.row_iter_mut() {
            row += b.transpose();
        }
        Self::new(values, self.column_names.clone())
    }

    /// Rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> DMatrix<T> {
        self.values.select_rows(indices)
    }
}

pub(crate) fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}
