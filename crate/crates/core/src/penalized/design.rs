use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One design column: `values` placed at rows `start..start + values.len()`,
/// zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub start: usize,
    pub values: Vec<f64>,
}

impl Column {
    pub fn end(&self) -> usize {
        self.start + self.values.len()
    }

    fn rows(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

/// Column-segment design matrix.
///
/// Step columns, panel columns restricted to a location block and ordinary
/// dense columns are all contiguous segments, so every design in this crate
/// fits this layout and coordinate updates cost only the segment length.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n_rows: usize,
    columns: Vec<Column>,
}

impl Design {
    pub fn new(n_rows: usize) -> Self {
        Self {
            n_rows,
            columns: Vec::new(),
        }
    }

    pub fn push_column(&mut self, start: usize, values: Vec<f64>) -> Result<()> {
        if start + values.len() > self.n_rows {
            return Err(Error::Dimension(format!(
                "column segment {}..{} exceeds {} rows",
                start,
                start + values.len(),
                self.n_rows
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("design entries must be finite".into()));
        }
        self.columns.push(Column { start, values });
        Ok(())
    }

    /// Dense matrix to segments; leading and trailing zeros are trimmed.
    pub fn from_dense(x: &DMatrix<f64>) -> Result<Self> {
        let mut d = Self::new(x.nrows());
        for col in x.column_iter() {
            let first = col.iter().position(|v| *v != 0.0);
            match first {
                None => d.push_column(0, Vec::new())?,
                Some(a) => {
                    let b = col.iter().rposition(|v| *v != 0.0).unwrap() + 1;
                    d.push_column(a, col.rows(a, b - a).iter().copied().collect())?;
                }
            }
        }
        Ok(d)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    pub fn dot(&self, j: usize, v: &[f64]) -> f64 {
        let c = &self.columns[j];
        c.values.iter().zip(&v[c.rows()]).map(|(a, b)| a * b).sum()
    }

    /// `v += alpha * x_j`
    pub fn axpy(&self, j: usize, alpha: f64, v: &mut [f64]) {
        let c = &self.columns[j];
        let rows = c.rows();
        for (dst, x) in v[rows].iter_mut().zip(&c.values) {
            *dst += alpha * x;
        }
    }

    pub fn col_sq_norm(&self, j: usize) -> f64 {
        self.columns[j].values.iter().map(|v| v * v).sum()
    }

    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows];
        for (j, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                self.axpy(j, *b, &mut out);
            }
        }
        out
    }

    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n_cols()).map(|j| self.dot(j, v)).collect()
    }

    /// `X^T X`, visiting only overlapping segments.
    pub fn gram(&self) -> DMatrix<f64> {
        let p = self.n_cols();
        let mut g = DMatrix::zeros(p, p);
        for a in 0..p {
            let ca = &self.columns[a];
            for b in a..p {
                let cb = &self.columns[b];
                let lo = ca.start.max(cb.start);
                let hi = ca.end().min(cb.end());
                if lo >= hi {
                    continue;
                }
                let s: f64 = (lo..hi)
                    .map(|r| ca.values[r - ca.start] * cb.values[r - cb.start])
                    .sum();
                g[(a, b)] = s;
                g[(b, a)] = s;
            }
        }
        g
    }

    /// Nonzero entries of `X^T X` row by row, diagonal included. `None` when
    /// the count would exceed `max_nnz`.
    pub(crate) fn sparse_gram(&self, max_nnz: usize) -> Option<Vec<Vec<(usize, f64)>>> {
        let p = self.n_cols();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p];
        let mut nnz = 0;
        for a in 0..p {
            let ca = &self.columns[a];
            for b in a..p {
                let cb = &self.columns[b];
                let lo = ca.start.max(cb.start);
                let hi = ca.end().min(cb.end());
                if lo >= hi {
                    continue;
                }
                let s: f64 = ca.values[lo - ca.start..hi - ca.start]
                    .iter()
                    .zip(&cb.values[lo - cb.start..hi - cb.start])
                    .map(|(x, y)| x * y)
                    .sum();
                if s == 0.0 {
                    continue;
                }
                nnz += if a == b { 1 } else { 2 };
                if nnz > max_nnz {
                    return None;
                }
                rows[a].push((b, s));
                if a != b {
                    rows[b].push((a, s));
                }
            }
        }
        Some(rows)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n_rows, self.n_cols());
        for (j, c) in self.columns.iter().enumerate() {
            for (k, v) in c.values.iter().enumerate() {
                x[(c.start + k, j)] = *v;
            }
        }
        x
    }

    /// Copy with every row outside `keep` zeroed.
    pub fn masked(&self, keep: &[bool]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                start: c.start,
                values: c
                    .values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| if keep[c.start + k] { *v } else { 0.0 })
                    .collect(),
            })
            .collect();
        Self {
            n_rows: self.n_rows,
            columns,
        }
    }

    /// Appends a column of ones over every row.
    pub(crate) fn with_ones_column(&self) -> Self {
        let mut d = self.clone();
        d.columns.push(Column {
            start: 0,
            values: vec![1.0; self.n_rows],
        });
        d
    }

    pub(crate) fn tr_mul_dvec(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.tr_mul_vec(v.as_slice()))
    }
}
