//! Dense row-major `f64` matrices with the handful of kernels the network needs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            bail!(Shape, "matrix {rows}x{cols} needs {} values, got {}", rows * cols, values.len());
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            bail!(Data, "non-finite value at index {i}");
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut out = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            let row = self.row(r);
            out.extend(cols.iter().map(|&c| row[c]));
        }
        Matrix { rows: self.rows, cols: cols.len(), values: out }
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut out = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            out.extend_from_slice(self.row(r));
        }
        Matrix { rows: rows.len(), cols: self.cols, values: out }
    }

    /// `self · rhs + bias` (bias broadcast over rows).
    pub(crate) fn matmul_bias(&self, rhs: &Matrix, bias: &[f64]) -> Matrix {
        debug_assert_eq!(self.cols, rhs.rows);
        debug_assert_eq!(bias.len(), rhs.cols);
        let n = rhs.cols;
        let mut out = Vec::with_capacity(self.rows * n);
        for _ in 0..self.rows {
            out.extend_from_slice(bias);
        }
        for r in 0..self.rows {
            let acc = &mut out[r * n..(r + 1) * n];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.values[k * n..(k + 1) * n];
                for (o, &b) in acc.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Matrix { rows: self.rows, cols: n, values: out }
    }

    /// `selfᵀ · rhs`, written into `out` (overwritten).
    pub(crate) fn t_matmul_into(&self, rhs: &Matrix, out: &mut Matrix) {
        debug_assert_eq!(self.rows, rhs.rows);
        debug_assert_eq!(out.shape(), (self.cols, rhs.cols));
        let n = rhs.cols;
        out.values.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.rows {
            let rhs_row = rhs.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let acc = &mut out.values[i * n..(i + 1) * n];
                for (o, &b) in acc.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
    }

    /// `self · rhsᵀ`.
    pub(crate) fn matmul_t(&self, rhs: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, rhs.cols);
        let mut out = Vec::with_capacity(self.rows * rhs.rows);
        for r in 0..self.rows {
            let a = self.row(r);
            for c in 0..rhs.rows {
                let b = rhs.row(c);
                out.push(a.iter().zip(b).map(|(x, y)| x * y).sum());
            }
        }
        Matrix { rows: self.rows, cols: rhs.rows, values: out }
    }

    /// Column sums written into `out`.
    pub(crate) fn col_sums_into(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
    }
}
