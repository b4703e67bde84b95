use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major real matrix.
///
/// Holds per-item content vectors as well as user and item embeddings. Values
/// are kept in `f64` in memory; the on-disk EMB1 format stores `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Rows `indices` gathered into a new matrix, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.rows,
                });
            }
            values.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            values,
        })
    }

    /// L2 norm of every row.
    pub fn row_norms(&self) -> Vec<f64> {
        self.iter_rows().map(norm).collect()
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(p) => Err(Error::NonFinite(format!(
                "{what}: row {}, column {}",
                p / self.cols.max(1),
                p % self.cols.max(1)
            ))),
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Scales `row` to unit L2 norm in place. All-zero rows are left alone.
pub fn normalize_row(row: &mut [f64]) {
    let n = norm(row);
    if n > 0.0 {
        row.iter_mut().for_each(|v| *v /= n);
    }
}

/// Normalizes each mode block row-wise and concatenates the blocks.
pub fn build_features(modes: &[FeatureMatrix]) -> Result<FeatureMatrix> {
    let first = modes
        .first()
        .ok_or_else(|| Error::Empty("no feature modes given".into()))?;
    let rows = first.rows();
    for (m, mode) in modes.iter().enumerate() {
        if mode.rows() != rows {
            return Err(Error::Dimension(format!(
                "mode {m} has {} rows, mode 0 has {rows}",
                mode.rows()
            )));
        }
        mode.ensure_finite(&format!("feature mode {m}"))?;
    }
    let cols: usize = modes.iter().map(FeatureMatrix::cols).sum();
    let mut out = FeatureMatrix::zeros(rows, cols);
    for i in 0..rows {
        let dst = out.row_mut(i);
        let mut offset = 0;
        for mode in modes {
            let block = &mut dst[offset..offset + mode.cols()];
            block.copy_from_slice(mode.row(i));
            normalize_row(block);
            offset += mode.cols();
        }
    }
    Ok(out)
}
