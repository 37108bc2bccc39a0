//! Block LASSO subproblem `min_y 1/2 ||A_i y - b~||^2 + lambda ||y||_1` and its
//! approximate solution by projected gradient on the split `y = y+ - y-`.
//!
//! With `B_i = A_i^T A_i`, `L_i = 1` and `g = grad_i f(x)` the subproblem
//! objective differs from the block prox objective by a constant, so a
//! duality gap `<= delta` certifies membership in the inexact prox set.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm1, norm2_sq, norm_inf, spectral_norm_sq, SparseCsc};
use crate::metric::Metric;
use crate::problem::CompositeProblem;
use crate::prox::ProxQuery;

/// Power iterations used to bound the lifted curvature.
pub const LIFTED_POWER_ITERS: usize = 30;
/// Safety margin applied to the power-iteration estimate.
pub const LIFTED_MARGIN: f64 = 1.05;
/// Inner iteration cap.
pub const DEFAULT_MAX_INNER: usize = 100_000;

/// Tolerance used when `delta = 0` is requested.
pub fn machine_precision_tolerance(p0: f64) -> f64 {
    1e-12 * (1.0 + p0.abs())
}

/// Curvature bound of the lifted quadratic `q(y+, y-)`: `2 ||A_i||^2` times a margin.
pub fn lifted_lipschitz(block: &SparseCsc) -> f64 {
    2.0 * LIFTED_MARGIN * spectral_norm_sq(block, LIFTED_POWER_ITERS, 0.0)
}

#[derive(Debug, Clone)]
pub struct LassoSubproblem {
    block: Arc<SparseCsc>,
    b_tilde: Vec<f64>,
    lambda: f64,
    atb: Vec<f64>,
    lifted_l: Option<f64>,
}

impl LassoSubproblem {
    pub fn new(block: Arc<SparseCsc>, b_tilde: Vec<f64>, lambda: f64) -> Result<Self> {
        if block.nrows() != b_tilde.len() {
            return Err(Error::Dimension(format!(
                "block has {} rows, b~ has length {}",
                block.nrows(),
                b_tilde.len()
            )));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda = {lambda} must be >= 0")));
        }
        let atb = block.tr_mul_vec(&b_tilde);
        Ok(Self {
            block,
            b_tilde,
            lambda,
            atb,
            lifted_l: None,
        })
    }

    /// Reuses a lifted curvature bound computed once per block.
    pub fn with_lifted_lipschitz(mut self, l: f64) -> Self {
        self.lifted_l = Some(l);
        self
    }

    /// The prox query `(x, g, delta, B, lambda)` as an equivalent LASSO:
    /// with `B = L L^T`, `A = L^T` and `b~ = L^T x - L^{-1} g`.
    pub fn from_prox_query(query: &ProxQuery) -> Result<Self> {
        let n = query.dim();
        let b = DMatrix::from_row_slice(n, n, &query.metric.to_dense());
        let chol = Cholesky::new(b)
            .ok_or_else(|| Error::NotPositiveDefinite("prox metric".into()))?;
        let l = chol.l();
        let lt = l.transpose();
        let lt_x = &lt * DVector::from_column_slice(&query.x);
        let linv_g = l
            .solve_lower_triangular(&DVector::from_column_slice(&query.g))
            .ok_or_else(|| Error::NotPositiveDefinite("triangular solve".into()))?;
        let b_tilde: Vec<f64> = (lt_x - linv_g).as_slice().to_vec();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| lt[(i, j)]).collect()).collect();
        Self::new(Arc::new(SparseCsc::from_dense_rows(&rows)?), b_tilde, query.lambda)
    }

    pub fn block(&self) -> &SparseCsc {
        &self.block
    }

    pub fn dim(&self) -> usize {
        self.block.ncols()
    }

    pub fn b_tilde(&self) -> &[f64] {
        &self.b_tilde
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `A_i^T b~`
    pub fn atb(&self) -> &[f64] {
        &self.atb
    }

    /// `A_i y - b~`
    pub fn residual(&self, y: &[f64]) -> Vec<f64> {
        let mut r = self.block.mul_vec(y);
        for (ri, bi) in r.iter_mut().zip(&self.b_tilde) {
            *ri -= bi;
        }
        r
    }

    /// `1/2 ||A_i y - b~||^2`, the part of `f` that moves with the block.
    pub fn smooth_value(&self, y: &[f64]) -> f64 {
        0.5 * norm2_sq(&self.residual(y))
    }

    pub fn primal(&self, y: &[f64]) -> f64 {
        self.smooth_value(y) + self.lambda * norm1(y)
    }

    pub fn duality_gap(&self, y: &[f64]) -> f64 {
        let res = self.residual(y);
        let grad = self.block.tr_mul_vec(&res);
        let primal = 0.5 * norm2_sq(&res) + self.lambda * norm1(y);
        self.gap_from_parts(&res, &grad, primal)
    }

    /// Gap with the dual point `theta = s (A y - b~)`,
    /// `s = min(1, lambda / ||A^T (A y - b~)||_inf)`,
    /// `D(theta) = -1/2 ||theta||^2 - <theta, b~>`.
    fn gap_from_parts(&self, res: &[f64], grad: &[f64], primal: f64) -> f64 {
        let gmax = norm_inf(grad);
        let s = if gmax > self.lambda { self.lambda / gmax } else { 1.0 };
        let dual = -0.5 * s * s * norm2_sq(res) - s * dot(res, &self.b_tilde);
        (primal - dual).max(0.0)
    }

    /// Constant `c` with `<g,y> + 1/2 ||y - x_i||_B^2 + lambda ||y||_1 = P(y) + c`.
    /// Fails unless `B = A_i^T A_i` and `g = A_i^T (A_i x_i - b~)`.
    pub fn prox_equivalence_constant(&self, query: &ProxQuery) -> Result<f64> {
        let n = self.dim();
        if query.dim() != n {
            return Err(Error::Dimension(format!(
                "query dim {} against block dim {n}",
                query.dim()
            )));
        }
        let tol = 1e-9;
        // B must act like A_i^T A_i on the coordinate directions.
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let via_metric = query.metric.apply(&e);
            let via_block = self.block.tr_mul_vec(&self.block.mul_vec(&e));
            e[j] = 0.0;
            let scale = 1.0 + norm_inf(&via_block);
            if via_metric
                .iter()
                .zip(&via_block)
                .any(|(a, b)| (a - b).abs() > tol * scale)
            {
                return Err(Error::InvalidArgument(
                    "metric mismatch: B differs from A_i^T A_i".into(),
                ));
            }
        }
        let expected_g = self.block.tr_mul_vec(&self.residual(&query.x));
        let scale = 1.0 + norm_inf(&expected_g);
        if query
            .g
            .iter()
            .zip(&expected_g)
            .any(|(a, b)| (a - b).abs() > tol * scale)
        {
            return Err(Error::InvalidArgument(
                "metric mismatch: g is not the block gradient at x".into(),
            ));
        }
        Ok(0.5 * norm2_sq(&self.block.mul_vec(&query.x)) - 0.5 * norm2_sq(&self.b_tilde))
    }

    /// The block prox query whose inexact prox set this subproblem solves.
    pub fn prox_query(&self, x_i: &[f64], delta: f64) -> Result<ProxQuery> {
        let g = self.block.tr_mul_vec(&self.residual(x_i));
        let metric = Metric::dense(self.dim(), &self.block.gram_dense())?;
        ProxQuery::new(x_i.to_vec(), g, delta, metric, self.lambda)
    }
}

/// `b~ = b - A x + A_i x_i`, computed from the maintained residual `r = A x - b`
/// as `A_i x_i - r`.
pub fn build_subproblem(
    problem: &CompositeProblem,
    x: &[f64],
    residual: &[f64],
    i: usize,
) -> Result<LassoSubproblem> {
    if cfg!(debug_assertions) {
        check_residual(problem, x, residual)?;
    }
    build_unchecked(problem, x, residual, i)
}

/// As [`build_subproblem`], always verifying the residual.
pub fn build_subproblem_checked(
    problem: &CompositeProblem,
    x: &[f64],
    residual: &[f64],
    i: usize,
) -> Result<LassoSubproblem> {
    check_residual(problem, x, residual)?;
    build_unchecked(problem, x, residual, i)
}

fn build_unchecked(
    problem: &CompositeProblem,
    x: &[f64],
    residual: &[f64],
    i: usize,
) -> Result<LassoSubproblem> {
    if i >= problem.num_blocks() {
        return Err(Error::Index(format!("block {i} of {}", problem.num_blocks())));
    }
    if x.len() != problem.dim() || residual.len() != problem.smooth().rhs().len() {
        return Err(Error::Dimension("state or residual has the wrong length".into()));
    }
    let block = Arc::clone(problem.smooth().block(i));
    let mut b_tilde = block.mul_vec(&x[problem.partition().range(i)]);
    for (bt, r) in b_tilde.iter_mut().zip(residual) {
        *bt -= r;
    }
    LassoSubproblem::new(block, b_tilde, problem.lambda(i))
}

fn check_residual(problem: &CompositeProblem, x: &[f64], residual: &[f64]) -> Result<()> {
    if x.len() != problem.dim() {
        return Err(Error::Dimension("state has the wrong length".into()));
    }
    let fresh = problem.smooth().residual(x);
    if fresh.len() != residual.len() {
        return Err(Error::Dimension("residual has the wrong length".into()));
    }
    let drift = fresh
        .iter()
        .zip(residual)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = 1.0 + norm_inf(problem.smooth().rhs()) + norm_inf(&fresh);
    if drift > 1e-9 * scale {
        return Err(Error::StaleResidual(format!(
            "maintained residual is off by {drift:e}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct SubsolverOptions {
    pub max_inner: usize,
    /// Projected-gradient steps taken before the stopping test may fire.
    pub min_inner: usize,
    /// Give up on the guard once the gap is at machine precision: later
    /// iterates only approach the same minimizer.
    pub stop_on_stall: bool,
}

impl Default for SubsolverOptions {
    fn default() -> Self {
        Self {
            max_inner: DEFAULT_MAX_INNER,
            min_inner: 0,
            stop_on_stall: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubsolverResult {
    pub y: Vec<f64>,
    pub duality_gap: f64,
    pub primal: f64,
    /// `1/2 ||A_i y - b~||^2`
    pub smooth_value: f64,
    pub inner_iterations: usize,
    /// Gap reached the requested tolerance.
    pub converged: bool,
    pub f_decrease_satisfied: bool,
    pub wall_time: f64,
}

/// Projected gradient on `q(y+, y-) = 1/2 ||A_i (y+ - y-) - b~||^2 + lambda 1^T (y+ + y-)`
/// over `y+, y- >= 0` with fixed step `1 / L_sub`, warm-started from `y0`
/// split by sign.
///
/// Stops at the first iterate whose duality gap is `<= delta` and for which
/// `f_guard(y, 1/2 ||A_i y - b~||^2)` holds. At the cap, returns the
/// gap-feasible iterate with the smallest smooth value (or the last iterate
/// when none was gap-feasible) with flags describing what was achieved.
pub fn box_gp_solve<G>(
    sub: &LassoSubproblem,
    y0: &[f64],
    delta: f64,
    mut f_guard: G,
    options: SubsolverOptions,
) -> Result<SubsolverResult>
where
    G: FnMut(&[f64], f64) -> bool,
{
    let start = Instant::now();
    let n = sub.dim();
    if y0.len() != n {
        return Err(Error::Dimension(format!("y0 has length {}, block has {n}", y0.len())));
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} must be >= 0")));
    }
    let lambda = sub.lambda;
    let step = 1.0 / sub.lifted_l.unwrap_or_else(|| lifted_lipschitz(&sub.block));
    let mut zp: Vec<f64> = y0.iter().map(|v| v.max(0.0)).collect();
    let mut zm: Vec<f64> = y0.iter().map(|v| (-v).max(0.0)).collect();
    let mut y = y0.to_vec();
    let mut res = vec![0.0; sub.block.nrows()];
    let mut grad = vec![0.0; n];

    let mut tol = delta;
    // (smooth value, y, gap) of the best gap-feasible iterate that failed the guard
    let mut best: Option<(f64, Vec<f64>, f64, f64)> = None;
    let mut last;
    let mut it = 0;
    loop {
        sub.block.mul_vec_into(&y, &mut res);
        for (r, b) in res.iter_mut().zip(&sub.b_tilde) {
            *r -= b;
        }
        sub.block.tr_mul_vec_into(&res, &mut grad);
        let smooth = 0.5 * norm2_sq(&res);
        let primal = smooth + lambda * norm1(&y);
        if it == 0 && delta == 0.0 {
            tol = machine_precision_tolerance(primal);
        }
        let gap = sub.gap_from_parts(&res, &grad, primal);
        last = (gap, primal, smooth);
        if gap <= tol && it >= options.min_inner {
            if f_guard(&y, smooth) {
                return Ok(SubsolverResult {
                    y,
                    duality_gap: gap,
                    primal,
                    smooth_value: smooth,
                    inner_iterations: it,
                    converged: true,
                    f_decrease_satisfied: true,
                    wall_time: start.elapsed().as_secs_f64(),
                });
            }
            if best.as_ref().map_or(true, |b| smooth < b.0) {
                best = Some((smooth, y.clone(), gap, primal));
            }
            if options.stop_on_stall && gap <= machine_precision_tolerance(primal) {
                break;
            }
        }
        if it >= options.max_inner {
            break;
        }
        it += 1;
        for j in 0..n {
            zp[j] = (zp[j] - step * (grad[j] + lambda)).max(0.0);
            zm[j] = (zm[j] - step * (lambda - grad[j])).max(0.0);
            y[j] = zp[j] - zm[j];
        }
    }
    let wall_time = start.elapsed().as_secs_f64();
    Ok(match best {
        Some((smooth, y, gap, primal)) => {
            let ok = f_guard(&y, smooth);
            SubsolverResult {
                y,
                duality_gap: gap,
                primal,
                smooth_value: smooth,
                inner_iterations: it,
                converged: true,
                f_decrease_satisfied: ok,
                wall_time,
            }
        }
        None => {
            let (gap, primal, smooth) = last;
            let ok = f_guard(&y, smooth);
            SubsolverResult {
                y,
                duality_gap: gap,
                primal,
                smooth_value: smooth,
                inner_iterations: it,
                converged: false,
                f_decrease_satisfied: ok,
                wall_time,
            }
        }
    })
}

/// Lifted objective `q(y+, y-)`; tests use it to check monotonicity.
pub fn lifted_objective(sub: &LassoSubproblem, zp: &[f64], zm: &[f64]) -> f64 {
    let y: Vec<f64> = zp.iter().zip(zm).map(|(a, b)| a - b).collect();
    sub.smooth_value(&y) + sub.lambda * (zp.iter().sum::<f64>() + zm.iter().sum::<f64>())
}

/// Runs `iters` fixed projected-gradient steps from `y0` and returns the
/// lifted objective after each step (index 0 is the start).
pub fn lifted_trajectory(sub: &LassoSubproblem, y0: &[f64], iters: usize) -> Vec<f64> {
    let n = sub.dim();
    let step = 1.0 / sub.lifted_l.unwrap_or_else(|| lifted_lipschitz(&sub.block));
    let mut zp: Vec<f64> = y0.iter().map(|v| v.max(0.0)).collect();
    let mut zm: Vec<f64> = y0.iter().map(|v| (-v).max(0.0)).collect();
    let mut out = vec![lifted_objective(sub, &zp, &zm)];
    for _ in 0..iters {
        let y: Vec<f64> = zp.iter().zip(&zm).map(|(a, b)| a - b).collect();
        let grad = sub.block.tr_mul_vec(&sub.residual(&y));
        for j in 0..n {
            zp[j] = (zp[j] - step * (grad[j] + sub.lambda)).max(0.0);
            zm[j] = (zm[j] - step * (sub.lambda - grad[j])).max(0.0);
        }
        out.push(lifted_objective(sub, &zp, &zm));
    }
    out
}
