//! The block-separable composite problem
//! `F(x) = 1/2 ||Ax - b||^2 + sum_i lambda_i ||x_i||_1`
//! with its block partition, block metrics and smoothness constants.
//!
//! Blocks are contiguous coordinate ranges; the block selection matrices are
//! never materialized.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm1, norm2_sq, spectral_norm_sq, SparseCsc};
use crate::metric::Metric;

const SPECTRAL_MAX_ITER: usize = 20_000;
const SPECTRAL_REL_TOL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    sizes: Vec<usize>,
    starts: Vec<usize>,
}

impl BlockPartition {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(
                "block sizes must be a non-empty list of positive integers".into(),
            ));
        }
        let mut starts = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        starts.push(0);
        for s in &sizes {
            acc += s;
            starts.push(acc);
        }
        Ok(Self { sizes, starts })
    }

    /// `p` near-equal blocks; the remainder `n mod p` goes one each to the
    /// leading blocks.
    pub fn near_equal(n: usize, p: usize) -> Result<Self> {
        if p == 0 || p > n {
            return Err(Error::InvalidArgument(format!(
                "cannot split {n} coordinates into {p} non-empty blocks"
            )));
        }
        let base = n / p;
        let rem = n % p;
        Self::new((0..p).map(|i| base + usize::from(i < rem)).collect())
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn dim(&self) -> usize {
        *self.starts.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.starts[i]..self.starts[i + 1]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_blocks()).map(|i| self.range(i))
    }
}

/// `f(x) = 1/2 ||Ax - b||^2` with per-block column slices of `A` cached.
#[derive(Debug, Clone)]
pub struct QuadraticSmoothTerm {
    a: SparseCsc,
    b: Vec<f64>,
    blocks: Vec<Arc<SparseCsc>>,
}

impl QuadraticSmoothTerm {
    pub fn new(a: SparseCsc, b: Vec<f64>, partition: &BlockPartition) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "A has {} rows but b has length {}",
                a.nrows(),
                b.len()
            )));
        }
        if a.ncols() != partition.dim() {
            return Err(Error::Dimension(format!(
                "A has {} columns but the partition covers {}",
                a.ncols(),
                partition.dim()
            )));
        }
        let blocks = partition
            .ranges()
            .map(|r| Arc::new(a.column_block(r.start, r.end)))
            .collect();
        Ok(Self { a, b, blocks })
    }

    pub fn matrix(&self) -> &SparseCsc {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn block(&self, i: usize) -> &Arc<SparseCsc> {
        &self.blocks[i]
    }

    /// `Ax - b`
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.a.mul_vec(x);
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        r
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * norm2_sq(&self.residual(x))
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.a.tr_mul_vec(&self.residual(x))
    }
}

/// How the block metrics `B_i` and constants `L_i` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MetricFamily {
    /// `B_i = A_i^T A_i`, `L_i = 1`. Block smoothness holds with equality.
    Gram,
    /// `B_i = I`, `L_i = ||A_i||_2^2`. The block prox has a closed form.
    Identity,
}

#[derive(Debug, Clone)]
pub struct BlockMetric {
    pub metric: Metric,
    pub lipschitz: f64,
}

#[derive(Debug, Clone)]
pub struct CompositeProblem {
    smooth: QuadraticSmoothTerm,
    lambdas: Vec<f64>,
    partition: BlockPartition,
    metrics: Vec<BlockMetric>,
    family: MetricFamily,
    l_f: f64,
}

impl CompositeProblem {
    /// LASSO with one `lambda` per block.
    pub fn lasso(
        a: SparseCsc,
        b: Vec<f64>,
        lambdas: Vec<f64>,
        partition: BlockPartition,
        family: MetricFamily,
    ) -> Result<Self> {
        if lambdas.len() != partition.num_blocks() {
            return Err(Error::Dimension(format!(
                "{} regularizer weights for {} blocks",
                lambdas.len(),
                partition.num_blocks()
            )));
        }
        if lambdas.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("lambda must be finite and >= 0".into()));
        }
        let smooth = QuadraticSmoothTerm::new(a, b, &partition)?;
        let metrics = (0..partition.num_blocks())
            .map(|i| {
                let block = Arc::clone(smooth.block(i));
                match family {
                    MetricFamily::Gram => Ok(BlockMetric {
                        metric: Metric::gram(block).map_err(|e| {
                            Error::NotPositiveDefinite(format!(
                                "block {i}: A_i^T A_i is singular ({e})"
                            ))
                        })?,
                        lipschitz: 1.0,
                    }),
                    MetricFamily::Identity => {
                        let l = spectral_norm_sq(&block, SPECTRAL_MAX_ITER, SPECTRAL_REL_TOL);
                        if !(l > 0.0) {
                            return Err(Error::InvalidArgument(format!(
                                "block {i} of A is zero"
                            )));
                        }
                        Ok(BlockMetric {
                            metric: Metric::identity(block.ncols()),
                            lipschitz: l,
                        })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut problem = Self {
            smooth,
            lambdas,
            partition,
            metrics,
            family,
            l_f: 0.0,
        };
        problem.l_f = problem.default_global_smoothness();
        Ok(problem)
    }

    pub fn lasso_uniform(
        a: SparseCsc,
        b: Vec<f64>,
        lambda: f64,
        partition: BlockPartition,
        family: MetricFamily,
    ) -> Result<Self> {
        let p = partition.num_blocks();
        Self::lasso(a, b, vec![lambda; p], partition, family)
    }

    pub fn smooth(&self) -> &QuadraticSmoothTerm {
        &self.smooth
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn num_blocks(&self) -> usize {
        self.partition.num_blocks()
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    pub fn family(&self) -> MetricFamily {
        self.family
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.lambdas[i]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn block_metric(&self, i: usize) -> &BlockMetric {
        &self.metrics[i]
    }

    pub fn l_f(&self) -> f64 {
        self.l_f
    }

    pub fn l_min(&self) -> f64 {
        self.metrics.iter().map(|m| m.lipschitz).fold(f64::INFINITY, f64::min)
    }

    pub fn l_max(&self) -> f64 {
        self.metrics.iter().map(|m| m.lipschitz).fold(0.0, f64::max)
    }

    pub fn set_global_smoothness(&mut self, l_f: f64) {
        self.l_f = l_f;
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "expected a vector of length {}, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(())
    }

    fn check_block(&self, i: usize) -> Result<()> {
        if i >= self.num_blocks() {
            return Err(Error::Index(format!(
                "block {i} of {}",
                self.num_blocks()
            )));
        }
        Ok(())
    }

    pub fn regularizer(&self, x: &[f64]) -> f64 {
        self.partition
            .ranges()
            .zip(&self.lambdas)
            .map(|(r, l)| l * norm1(&x[r]))
            .sum()
    }

    pub fn full_objective(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.smooth.value(x) + self.regularizer(x))
    }

    /// `A_i^T (Ax - b)`
    pub fn block_gradient(&self, x: &[f64], i: usize) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.check_block(i)?;
        Ok(self.smooth.block(i).tr_mul_vec(&self.smooth.residual(x)))
    }

    pub fn block_norm(&self, t: &[f64], i: usize) -> Result<f64> {
        self.check_block(i)?;
        self.check_block_len(t, i)?;
        Ok(self.metrics[i].metric.norm(t))
    }

    pub fn block_dual_norm(&self, v: &[f64], i: usize) -> Result<f64> {
        self.check_block(i)?;
        self.check_block_len(v, i)?;
        self.metrics[i].metric.dual_norm(v)
    }

    fn check_block_len(&self, t: &[f64], i: usize) -> Result<()> {
        let n_i = self.partition.sizes()[i];
        if t.len() != n_i {
            return Err(Error::Dimension(format!(
                "block {i} has size {n_i}, got a vector of length {}",
                t.len()
            )));
        }
        Ok(())
    }

    pub fn global_b_norm(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self
            .partition
            .ranges()
            .zip(&self.metrics)
            .map(|(r, m)| m.metric.norm_sq(&x[r]))
            .sum::<f64>()
            .sqrt())
    }

    /// A constant that is always valid for the metric family: `p` for Gram
    /// metrics (`||At||^2 <= p sum_i ||A_i t_i||^2`), `sum_i L_i` for
    /// identity metrics.
    pub fn default_global_smoothness(&self) -> f64 {
        match self.family {
            MetricFamily::Gram => self.num_blocks() as f64,
            MetricFamily::Identity => self.metrics.iter().map(|m| m.lipschitz).sum(),
        }
    }

    /// Largest generalized eigenvalue of `(A^T A, B)` by power iteration on
    /// `B^{-1} A^T A`, capped by the default constant.
    pub fn refined_global_smoothness(&self) -> Result<f64> {
        let a = self.smooth.matrix();
        let n = self.dim();
        let mut tmp = vec![0.0; a.nrows()];
        let mut work = vec![0.0; n];
        // Iterate v <- B^{-1} A^T A v and track v^T A^T A v / v^T B v.
        let mut v = vec![1.0; n];
        let mut estimate = 0.0;
        for _ in 0..SPECTRAL_MAX_ITER {
            a.mul_vec_into(&v, &mut tmp);
            let num = norm2_sq(&tmp);
            let den = self.global_b_norm(&v)?.powi(2);
            let rq = num / den;
            a.tr_mul_vec_into(&tmp, &mut work);
            let mut next = vec![0.0; n];
            for (i, r) in self.partition.ranges().enumerate() {
                let s = self.metrics[i].metric.solve(&work[r.clone()])?;
                next[r].copy_from_slice(&s);
            }
            let scale = next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if scale == 0.0 {
                return Ok(0.0);
            }
            v = next.into_iter().map(|x| x / scale).collect();
            let done = (rq - estimate).abs() <= SPECTRAL_REL_TOL * rq;
            estimate = rq;
            if done {
                break;
            }
        }
        Ok(estimate.min(self.default_global_smoothness()))
    }

    pub fn estimate_global_smoothness(&self, refine: bool) -> Result<f64> {
        if refine {
            self.refined_global_smoothness()
        } else {
            Ok(self.default_global_smoothness())
        }
    }

    /// `f(x + U_i t) - [f(x) + <grad_i f(x), t> + L_i/2 ||t||_(i)^2]`, which
    /// block smoothness requires to be `<= 0`.
    pub fn verify_block_smoothness(&self, x: &[f64], t: &[f64], i: usize) -> Result<f64> {
        self.check_dim(x)?;
        self.check_block(i)?;
        self.check_block_len(t, i)?;
        let range = self.partition.range(i);
        let mut shifted = x.to_vec();
        for (s, ti) in shifted[range].iter_mut().zip(t) {
            *s += ti;
        }
        let g = self.block_gradient(x, i)?;
        let m = &self.metrics[i];
        Ok(self.smooth.value(&shifted)
            - (self.smooth.value(x) + dot(&g, t) + 0.5 * m.lipschitz * m.metric.norm_sq(t)))
    }

    /// `f(x + t) - [f(x) + <grad f(x), t> + L_f/2 ||t||_B^2]`
    pub fn verify_global_smoothness(&self, x: &[f64], t: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(t)?;
        let g = self.smooth.gradient(x);
        let shifted: Vec<f64> = x.iter().zip(t).map(|(a, b)| a + b).collect();
        Ok(self.smooth.value(&shifted)
            - (self.smooth.value(x) + dot(&g, t) + 0.5 * self.l_f * self.global_b_norm(t)?.powi(2)))
    }
}

/// `||A||_2^2` of a whole problem matrix; used for the single-block identity metric.
pub fn matrix_spectral_norm_sq(a: &SparseCsc) -> f64 {
    spectral_norm_sq(a, SPECTRAL_MAX_ITER, SPECTRAL_REL_TOL)
}
