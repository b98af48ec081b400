//! Dense row-major matrices with row/column insertion and removal.
//!
//! The hidden layer changes width during training, so every weight block
//! must support growing and shrinking along the neuron dimension. Kernels
//! use fixed summation orders, so results are reproducible for a given
//! seed regardless of thread count.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix entry by entry, row-major.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// All entries, row-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// L1 norm of column `j`.
    pub fn col_l1(&self, j: usize) -> f64 {
        assert!(j < self.cols, "column {j} out of range ({} cols)", self.cols);
        let mut s = 0.0;
        for r in 0..self.rows {
            s += self.data[r * self.cols + j].abs();
        }
        s
    }

    /// Sum of |entry| over the whole matrix.
    pub fn l1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        for (yi, row) in y.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *yi = dot(row, x);
        }
    }

    /// `y += A^T x`.
    pub fn matvec_t_add(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(y.len(), self.cols);
        for (xi, row) in x.iter().zip(self.data.chunks_exact(self.cols)) {
            for (yj, aij) in y.iter_mut().zip(row) {
                *yj += aij * xi;
            }
        }
    }

    /// Rank-one update `A += u v^T`.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        assert_eq!(u.len(), self.rows);
        assert_eq!(v.len(), self.cols);
        for (ui, row) in u.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            for (aij, vj) in row.iter_mut().zip(v) {
                *aij += ui * vj;
            }
        }
    }

    /// Appends a row at the bottom.
    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    /// Appends a column at the right.
    pub fn push_col(&mut self, col: &[f64]) {
        assert_eq!(col.len(), self.rows);
        let old = self.cols;
        let mut data = Vec::with_capacity(self.rows * (old + 1));
        for (r, v) in col.iter().enumerate() {
            data.extend_from_slice(&self.data[r * old..(r + 1) * old]);
            data.push(*v);
        }
        self.data = data;
        self.cols += 1;
    }

    pub fn remove_row(&mut self, r: usize) {
        assert!(r < self.rows, "row {r} out of range ({} rows)", self.rows);
        self.data.drain(r * self.cols..(r + 1) * self.cols);
        self.rows -= 1;
    }

    pub fn remove_col(&mut self, c: usize) {
        assert!(c < self.cols, "column {c} out of range ({} cols)", self.cols);
        let old = self.cols;
        let mut w = 0;
        for r in 0..self.rows {
            for j in 0..old {
                if j != c {
                    self.data[w] = self.data[r * old + j];
                    w += 1;
                }
            }
        }
        self.data.truncate(w);
        self.cols -= 1;
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of range");
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of range");
        &mut self.data[r * self.cols + c]
    }
}

/// Dot product with four independent accumulators. The split keeps the
/// summation order fixed while breaking the serial addition chain that
/// otherwise dominates the forward pass.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n4 = a.len() / 4 * 4;
    let mut acc = [0.0f64; 4];
    for (ca, cb) in a[..n4].chunks_exact(4).zip(b[..n4].chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (ai, bi) in a[n4..].iter().zip(&b[n4..]) {
        s += ai * bi;
    }
    s
}
