//! A minimal dense row-major `f32` matrix.
//!
//! Layer statistics at desk scale are small (tens to hundreds of rows), so
//! this is deliberately a plain `Vec<f32>` with index arithmetic — no
//! strides, no views. Accumulating reductions (norms, means, matrix
//! products) run in `f64` and cast back, matching the storage-f32 /
//! accumulate-f64 convention used throughout the crate.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Matrix {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from nested row slices; handy in tests.
    pub fn from_rows(rows: &[&[f32]]) -> Matrix {
        let r = rows.len();
        assert!(r > 0, "matrix needs at least one row");
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Applies `f` element-wise, producing a new matrix of the same shape.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Combines two same-shape matrices element-wise.
    pub fn zip(&self, other: &Matrix, f: impl Fn(f32, f32) -> f32) -> Matrix {
        assert_eq!(self.rows, other.rows, "row mismatch in zip");
        assert_eq!(self.cols, other.cols, "col mismatch in zip");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self * other^T` accumulated in f64. `self` is (m x k), `other` is
    /// (n x k); the result is (m x n) in f64.
    pub fn matmul_transpose_f64(&self, other: &Matrix) -> Vec<f64> {
        assert_eq!(self.cols, other.cols, "inner dimension mismatch");
        let m = self.rows;
        let n = other.rows;
        let mut out = vec![0.0f64; m * n];
        for i in 0..m {
            let a = self.row(i);
            for j in 0..n {
                let b = other.row(j);
                let mut acc = 0.0f64;
                for k in 0..self.cols {
                    acc += a[k] as f64 * b[k] as f64;
                }
                out[i * n + j] = acc;
            }
        }
        out
    }
}
