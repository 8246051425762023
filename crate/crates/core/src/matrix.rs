//! Minimal row-major matrix used for probabilities and embeddings.

/// Dense row-major `f64` matrix. Rows are samples, columns are whatever
/// view the producer computed (class probabilities, hidden activations,
/// gradient embeddings).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    n_cols: usize,
}

impl Matrix {
    pub fn empty(n_cols: usize) -> Self {
        Self {
            data: Vec::new(),
            n_cols,
        }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize) -> Self {
        Self {
            data: Vec::with_capacity(n_rows * n_cols),
            n_cols,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], n_cols: usize) -> Self {
        let mut m = Self::with_capacity(rows.len(), n_cols);
        for r in rows {
            m.push_row(r);
        }
        m
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols, "row length must match matrix width");
        self.data.extend_from_slice(row);
    }

    pub fn n_rows(&self) -> usize {
        self.data.len().checked_div(self.n_cols).unwrap_or(0)
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }
}

/// Squared Euclidean distance between two equal-length vectors.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
