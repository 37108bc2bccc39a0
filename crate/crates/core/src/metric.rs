//! Symmetric positive-definite metrics `B` and the norms they induce.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2_sq, SparseCsc};

/// Blocks up to this size get a dense Cholesky factor; larger ones use CG.
pub const CHOLESKY_MAX_DIM: usize = 2000;

const CG_REL_TOL: f64 = 1e-14;
const PIVOT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Repr {
    ScaledIdentity(f64),
    Dense {
        b: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
    /// `B = A^T A` applied through the sparse factor, inverted by CG.
    GramCg(Arc<SparseCsc>),
}

/// An SPD operator with apply / solve and the primal and dual norms
/// `||t||_B = sqrt(t^T B t)`, `||v||_B^* = sqrt(v^T B^{-1} v)`.
#[derive(Debug, Clone)]
pub struct Metric {
    dim: usize,
    repr: Repr,
}

impl Metric {
    pub fn scaled_identity(dim: usize, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::NotPositiveDefinite(format!("scale {c}")));
        }
        Ok(Self {
            dim,
            repr: Repr::ScaledIdentity(c),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            repr: Repr::ScaledIdentity(1.0),
        }
    }

    /// Dense SPD matrix given row-major. Fails when Cholesky fails.
    pub fn dense(dim: usize, row_major: &[f64]) -> Result<Self> {
        if row_major.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {dim}x{dim} metric, got {}",
                dim * dim,
                row_major.len()
            )));
        }
        let b = DMatrix::from_row_slice(dim, dim, row_major);
        let chol = Cholesky::new(b.clone())
            .ok_or_else(|| Error::NotPositiveDefinite(format!("Cholesky failed (dim {dim})")))?;
        // Rounding can let a singular matrix through with a tiny pivot.
        let l = chol.l_dirty();
        let max_diag = (0..dim).map(|i| b[(i, i)]).fold(0.0f64, f64::max);
        let min_pivot = (0..dim).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if dim > 0 && min_pivot <= PIVOT_REL_TOL * max_diag {
            return Err(Error::NotPositiveDefinite(format!(
                "pivot {min_pivot:e} against diagonal {max_diag:e}"
            )));
        }
        Ok(Self {
            dim,
            repr: Repr::Dense { b, chol },
        })
    }

    /// `B = A^T A` for a block with full column rank.
    pub fn gram(block: Arc<SparseCsc>) -> Result<Self> {
        let dim = block.ncols();
        if dim <= CHOLESKY_MAX_DIM {
            Self::dense(dim, &block.gram_dense())
        } else {
            if block.nrows() < dim {
                return Err(Error::NotPositiveDefinite(format!(
                    "{}x{dim} block cannot have full column rank",
                    block.nrows()
                )));
            }
            Ok(Self {
                dim,
                repr: Repr::GramCg(block),
            })
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_scaled_identity(&self) -> Option<f64> {
        match self.repr {
            Repr::ScaledIdentity(c) => Some(c),
            _ => None,
        }
    }

    pub fn apply(&self, t: &[f64]) -> Vec<f64> {
        debug_assert_eq!(t.len(), self.dim);
        match &self.repr {
            Repr::ScaledIdentity(c) => t.iter().map(|x| c * x).collect(),
            Repr::Dense { b, .. } => (b * DVector::from_column_slice(t)).as_slice().to_vec(),
            Repr::GramCg(a) => a.tr_mul_vec(&a.mul_vec(t)),
        }
    }

    /// `B^{-1} v`
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "vector of length {} against metric of dim {}",
                v.len(),
                self.dim
            )));
        }
        match &self.repr {
            Repr::ScaledIdentity(c) => Ok(v.iter().map(|x| x / c).collect()),
            Repr::Dense { chol, .. } => {
                Ok(chol.solve(&DVector::from_column_slice(v)).as_slice().to_vec())
            }
            Repr::GramCg(_) => self.solve_cg(v),
        }
    }

    fn solve_cg(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim;
        let mut x = vec![0.0; n];
        let mut r = rhs.to_vec();
        let mut p = r.clone();
        let mut rs = norm2_sq(&r);
        let target = CG_REL_TOL * CG_REL_TOL * rs.max(f64::MIN_POSITIVE);
        for _ in 0..(10 * n).max(100) {
            if rs <= target {
                return Ok(x);
            }
            let ap = self.apply(&p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::NotPositiveDefinite(
                    "CG met a non-positive curvature direction".into(),
                ));
            }
            let alpha = rs / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rs_new = norm2_sq(&r);
            let beta = rs_new / rs;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rs = rs_new;
        }
        if rs <= 1e-16 * norm2_sq(rhs) {
            Ok(x)
        } else {
            Err(Error::NotPositiveDefinite("CG did not converge".into()))
        }
    }

    pub fn norm_sq(&self, t: &[f64]) -> f64 {
        match &self.repr {
            Repr::ScaledIdentity(c) => c * norm2_sq(t),
            Repr::GramCg(a) => norm2_sq(&a.mul_vec(t)),
            Repr::Dense { .. } => dot(t, &self.apply(t)).max(0.0),
        }
    }

    pub fn norm(&self, t: &[f64]) -> f64 {
        self.norm_sq(t).sqrt()
    }

    pub fn dual_norm(&self, v: &[f64]) -> Result<f64> {
        let w = self.solve(v)?;
        Ok(dot(v, &w).max(0.0).sqrt())
    }

    /// Row-major dense copy of `B`.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        match &self.repr {
            Repr::ScaledIdentity(c) => {
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    m[i * n + i] = *c;
                }
                m
            }
            Repr::Dense { b, .. } => {
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        m[i * n + j] = b[(i, j)];
                    }
                }
                m
            }
            Repr::GramCg(a) => a.gram_dense(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_norm_is_euclidean() {
        let m = Metric::identity(2);
        assert_eq!(m.norm(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn diagonal_dual_norm() {
        let m = Metric::dense(1, &[4.0]).unwrap();
        assert!((m.dual_norm(&[2.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        assert!(matches!(
            Metric::dense(2, &[1.0, 2.0, 2.0, 1.0]),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(Metric::scaled_identity(3, 0.0).is_err());
    }

    #[test]
    fn cg_matches_cholesky() {
        let a = SparseCsc::from_dense_rows(&[
            vec![2.0, 0.5, 0.0],
            vec![0.0, 1.0, 0.3],
            vec![1.0, 0.0, 3.0],
            vec![0.2, 0.4, 0.0],
        ])
        .unwrap();
        let dense = Metric::dense(3, &a.gram_dense()).unwrap();
        let cg = Metric {
            dim: 3,
            repr: Repr::GramCg(Arc::new(a)),
        };
        let v = [1.0, -2.0, 0.5];
        let x1 = dense.solve(&v).unwrap();
        let x2 = cg.solve(&v).unwrap();
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-10);
        }
        assert!((dense.norm(&v) - cg.norm(&v)).abs() < 1e-12);
    }
}
