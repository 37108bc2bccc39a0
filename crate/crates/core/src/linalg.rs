//! Dense vector kernels, a column-compressed sparse matrix, and power iteration.
//!
//! All reductions run in index order so results are reproducible bit for bit.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    norm2_sq(a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(alpha: f64, a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| alpha * x).collect()
}

/// Sparse matrix in compressed sparse column layout.
///
/// Row indices inside a column are kept sorted, duplicates are summed on
/// construction, so iteration order is fixed for a given matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCsc {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCsc {
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols];
        for &(i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::Dimension(format!(
                    "entry ({i}, {j}) outside a {nrows}x{ncols} matrix"
                )));
            }
            cols[j].push((i, v));
        }
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        for mut col in cols {
            col.sort_by_key(|&(i, _)| i);
            let mut iter = col.into_iter().peekable();
            while let Some((i, mut v)) = iter.next() {
                while let Some(&(i2, v2)) = iter.peek() {
                    if i2 != i {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                row_idx.push(i);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn from_dense_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::Dimension("ragged dense rows".into()));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &triplets)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_nnz(&self, j: usize) -> usize {
        self.col_ptr[j + 1] - self.col_ptr[j]
    }

    /// `(row, value)` pairs of column `j` in increasing row order.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// All entries as `(row, col, value)` in column-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| self.column(j).map(move |(i, v)| (i, j, v)))
    }

    /// Copy of the columns in `start..end`.
    pub fn column_block(&self, start: usize, end: usize) -> Self {
        let lo = self.col_ptr[start];
        let hi = self.col_ptr[end];
        Self {
            nrows: self.nrows,
            ncols: end - start,
            col_ptr: self.col_ptr[start..=end].iter().map(|p| p - lo).collect(),
            row_idx: self.row_idx[lo..hi].to_vec(),
            values: self.values[lo..hi].to_vec(),
        }
    }

    /// `out = A x`
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        out.iter_mut().for_each(|v| *v = 0.0);
        self.mul_vec_add(1.0, x, out);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `out += alpha * A x`
    pub fn mul_vec_add(&self, alpha: f64, x: &[f64], out: &mut [f64]) {
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let a = alpha * xj;
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                out[self.row_idx[k]] += a * self.values[k];
            }
        }
    }

    /// `out = A^T y`
    pub fn tr_mul_vec_into(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        for (j, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                s += self.values[k] * y[self.row_idx[k]];
            }
            *o = s;
        }
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        self.tr_mul_vec_into(y, &mut out);
        out
    }

    /// Dense `A^T A`, row-major `ncols x ncols`.
    pub fn gram_dense(&self) -> Vec<f64> {
        let n = self.ncols;
        let mut dense_col = vec![0.0; self.nrows];
        let mut g = vec![0.0; n * n];
        for j in 0..n {
            for (i, v) in self.column(j) {
                dense_col[i] = v;
            }
            for k in j..n {
                let mut s = 0.0;
                for (i, v) in self.column(k) {
                    s += v * dense_col[i];
                }
                g[j * n + k] = s;
                g[k * n + j] = s;
            }
            for (i, _) in self.column(j) {
                dense_col[i] = 0.0;
            }
        }
        g
    }

    pub fn to_dense_rows(&self) -> Vec<Vec<f64>> {
        let mut rows = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            rows[i][j] = v;
        }
        rows
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite operator by power
/// iteration, started from the normalized all-ones vector.
///
/// Returns the final Rayleigh quotient, a lower bound on the true value.
pub fn power_iteration<F>(dim: usize, mut apply: F, max_iter: usize, rel_tol: f64) -> f64
where
    F: FnMut(&[f64], &mut [f64]),
{
    if dim == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut w = vec![0.0; dim];
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        apply(&v, &mut w);
        let rq = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
        let converged = (rq - estimate).abs() <= rel_tol * rq.abs();
        estimate = rq;
        if converged {
            break;
        }
    }
    estimate
}

/// `||A||_2^2` of a sparse matrix via power iteration on `A^T A`.
pub fn spectral_norm_sq(a: &SparseCsc, max_iter: usize, rel_tol: f64) -> f64 {
    let mut tmp = vec![0.0; a.nrows()];
    power_iteration(
        a.ncols(),
        |x, out| {
            a.mul_vec_into(x, &mut tmp);
            a.tr_mul_vec_into(&tmp, out);
        },
        max_iter,
        rel_tol,
    )
}
