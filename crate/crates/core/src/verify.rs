//! Randomized invariant suites behind `icbpg verify`, with an optional
//! injected fault to show the suites can fail.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bench::{calibrate_problem, generate_data, DatasetSpec, Shape};
use crate::error::Result;
use crate::linalg::{norm_inf, sub};
use crate::metric::Metric;
use crate::problem::{CompositeProblem, MetricFamily};
use crate::prox::{
    certify, check_certificate, default_y_samples, exact_prox_l1, gradient_error_embedding,
    is_member_by_value, lipschitz_bound_rhs, prox_value_gap, reference_minimum,
    rockafellar_membership, Certification, ProxQuery, MEMBERSHIP_SLACK,
};
use crate::solver::{run, slack_tolerance, SolverConfig, ToleranceSchedule};
use crate::subsolver::{box_gp_solve, LassoSubproblem, SubsolverOptions};
use crate::theory::{sweep_grid, write_grid_csv, GridKind, GRID_HORIZON, GRID_MARGIN_TOL};

pub const SUMMARY_FILE: &str = "verify_summary.json";

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    pub quick: bool,
    pub inject_fault: bool,
    pub seed: u64,
}

impl VerifyOptions {
    fn probes(&self) -> usize {
        if self.quick {
            100
        } else {
            1000
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub checks: usize,
    pub violations: usize,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &str, checks: usize, violations: usize, detail: String) -> Self {
        Self {
            name: name.to_string(),
            checks,
            violations,
            passed: violations == 0,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
    pub fault_injected: bool,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

/// Random SPD matrix (row-major) `G^T G / n + 0.1 I`, or a scaled identity.
pub fn random_metric<R: Rng>(n: usize, rng: &mut R) -> Metric {
    if rng.random_bool(0.2) {
        return Metric::scaled_identity(n, rng.random_range(0.2..5.0)).expect("positive scale");
    }
    let g: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += g[k * n + i] * g[k * n + j];
            }
            b[i * n + j] = s / n as f64 + if i == j { 0.1 } else { 0.0 };
        }
    }
    Metric::dense(n, &b).expect("G^T G + 0.1 I is SPD")
}

pub fn gaussian<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_query<R: Rng>(n: usize, delta: f64, rng: &mut R) -> ProxQuery {
    let metric = random_metric(n, rng);
    let lambda = rng.random_range(0.05..1.0);
    ProxQuery::new(gaussian(n, 1.0, rng), gaussian(n, 1.0, rng), delta, metric, lambda)
        .expect("consistent dimensions")
}

/// A point on a random ray from `minimizer` whose prox value gap is `level`
/// (or the far end of the ray if the gap never gets there). Half of the rays
/// keep the zero pattern of the minimizer.
pub fn point_at_gap<R: Rng>(
    query: &ProxQuery,
    minimizer: &[f64],
    min_value: f64,
    level: f64,
    rng: &mut R,
) -> Vec<f64> {
    let n = query.dim();
    let keep_zeros = rng.random_bool(0.5);
    let mut d = gaussian(n, 1.0, rng);
    if keep_zeros {
        for j in 0..n {
            if minimizer[j] == 0.0 {
                d[j] = 0.0;
            }
        }
        if d.iter().all(|&v| v == 0.0) {
            d = gaussian(n, 1.0, rng);
        }
    }
    let at = |t: f64| -> Vec<f64> { minimizer.iter().zip(&d).map(|(m, dj)| m + t * dj).collect() };
    let gap = |t: f64| query.objective(&at(t)) - min_value;
    if level <= 0.0 {
        return minimizer.to_vec();
    }
    let mut hi = 1e-3;
    while gap(hi) < level && hi < 1e6 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(lo)
}

pub fn certificate_suite(opts: &VerifyOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xC3);
    let mut violations = 0;
    let mut ambiguous = 0;
    let mut members = 0;
    let probes = opts.probes();
    for _ in 0..probes {
        let n = rng.random_range(1..=20);
        let delta = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) };
        let q = random_query(n, delta, &mut rng);
        let reference = reference_minimum(&q);
        let level = delta * rng.random_range(0.0..2.0);
        let u = point_at_gap(&q, &reference.point, reference.value, level, &mut rng);
        let gap = prox_value_gap(&q, &u, reference.value);
        let slack = MEMBERSHIP_SLACK * (1.0 + reference.value.abs());
        let by_value = is_member_by_value(&q, &u, reference.value);
        let cert = certify(&q, &u)?;
        if (gap - delta).abs() <= slack {
            ambiguous += 1;
        } else if by_value != cert.is_certified() {
            violations += 1;
            continue;
        }
        if let Certification::Certified(c) = cert {
            members += 1;
            let mut c = c;
            if opts.inject_fault {
                inflate(&q, &mut c.v)?;
            }
            let samples = default_y_samples(&q, &u, &reference.point, 50, &mut rng);
            if !check_certificate(&q, &c, &samples) {
                violations += 1;
            }
        }
    }
    Ok(SuiteResult::new(
        "prox_certificate",
        probes,
        violations,
        format!("{members} certified, {ambiguous} on the boundary"),
    ))
}

/// Scales `v` to twice the largest admissible dual norm.
fn inflate(q: &ProxQuery, v: &mut [f64]) -> Result<()> {
    let budget = (2.0 * q.delta).sqrt().max(1e-6);
    let vn = q.metric.dual_norm(v)?;
    if vn > 0.0 {
        let f = 2.0 * budget / vn;
        v.iter_mut().for_each(|x| *x *= f);
    } else {
        let mut e = vec![0.0; v.len()];
        e[0] = 1.0;
        let en = q.metric.dual_norm(&e)?;
        v[0] = 2.0 * budget / en;
    }
    Ok(())
}

pub fn lipschitz_suite(opts: &VerifyOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x11);
    let probes = opts.probes();
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..probes {
        let n = rng.random_range(1..=12);
        let metric = random_metric(n, &mut rng);
        let lambda = rng.random_range(0.05..1.0);
        let delta: f64 = rng.random_range(0.0..0.5);
        let eps = rng.random_range(0.0..0.5);
        let x = gaussian(n, 1.0, &mut rng);
        let g = gaussian(n, 1.0, &mut rng);
        let scale = rng.random_range(0.0..1.0);
        let y: Vec<f64> = x.iter().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let h: Vec<f64> = g.iter().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let qx = ProxQuery::new(x.clone(), g.clone(), delta, metric.clone(), lambda)?;
        let qy = ProxQuery::new(y.clone(), h.clone(), eps, metric.clone(), lambda)?;
        let rx = reference_minimum(&qx);
        let ry = reference_minimum(&qy);
        let u = point_at_gap(&qx, &rx.point, rx.value, delta * rng.random_range(0.0..1.0), &mut rng);
        let w = point_at_gap(&qy, &ry.point, ry.value, eps * rng.random_range(0.0..1.0), &mut rng);
        let lhs = metric.norm(&sub(&u, &w));
        let rhs = lipschitz_bound_rhs(&metric, &x, &y, &g, &h, delta, eps)?;
        worst = worst.min(rhs - lhs);
        if lhs > rhs + 1e-9 {
            violations += 1;
        }
    }
    Ok(SuiteResult::new("lipschitz", probes, violations, format!("min margin {worst:e}")))
}

pub fn inclusion_suite(opts: &VerifyOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1C);
    let probes = opts.probes();
    let mut violations = 0;
    let mut rock_members = 0;
    for _ in 0..probes {
        // Rockafellar-type points: B = I, g = 0.
        let n = rng.random_range(1..=15);
        let lambda = rng.random_range(0.05..1.0);
        let delta: f64 = rng.random_range(0.0..0.5);
        let x = gaussian(n, 1.0, &mut rng);
        let exact = exact_prox_l1(&x, &vec![0.0; n], lambda, 1.0)?;
        let mut u = exact.clone();
        let s = rng.random_range(0.0..1.0f64) * (2.0 * delta).sqrt();
        for (j, uj) in u.iter_mut().enumerate() {
            if exact[j] != 0.0 || rng.random_bool(0.3) {
                *uj += s * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let q = ProxQuery::new(x.clone(), vec![0.0; n], delta, Metric::identity(n), lambda)?;
        if rockafellar_membership(&x, delta, &u, lambda)? {
            rock_members += 1;
            let min = q.objective(&exact);
            if prox_value_gap(&q, &u, min) > delta + MEMBERSHIP_SLACK * (1.0 + min.abs()) {
                violations += 1;
            }
        }

        // Gradient errors absorbed into the tolerance.
        let n = rng.random_range(1..=12);
        let delta: f64 = rng.random_range(0.0..0.5);
        let q = random_query(n, delta, &mut rng);
        let e = gaussian(n, rng.random_range(0.0..1.0), &mut rng);
        let g_pert: Vec<f64> = q.g.iter().zip(&e).map(|(a, b)| a + b).collect();
        let qp = ProxQuery::new(q.x.clone(), g_pert, delta, q.metric.clone(), q.lambda)?;
        let rp = reference_minimum(&qp);
        let u = point_at_gap(&qp, &rp.point, rp.value, delta * rng.random_range(0.0..1.0), &mut rng);
        let widened = gradient_error_embedding(delta, q.metric.dual_norm(&e)?)?;
        let r = reference_minimum(&q);
        if !is_member_by_value(&q.with_delta(widened), &u, r.value) {
            violations += 1;
        }
    }
    Ok(SuiteResult::new(
        "inclusions",
        2 * probes,
        violations,
        format!("{rock_members} Rockafellar-type members"),
    ))
}

pub fn subsolver_suite(opts: &VerifyOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5B);
    let probes = opts.probes() / 10;
    let mut violations = 0;
    let mut worst_diag = 0.0f64;
    for _ in 0..probes {
        // Gram metric: gap bounds suboptimality and the result is a prox-set member.
        let n = rng.random_range(1..=5);
        let m = n + rng.random_range(0..6);
        let rows: Vec<Vec<f64>> = (0..m).map(|_| gaussian(n, 1.0, &mut rng)).collect();
        let a = crate::linalg::SparseCsc::from_dense_rows(&rows)?;
        let b = gaussian(m, 1.0, &mut rng);
        let lambda = rng.random_range(0.05..1.0);
        let sub_p = LassoSubproblem::new(std::sync::Arc::new(a), b, lambda)?;
        let x_i = gaussian(n, 0.5, &mut rng);
        let delta = 10f64.powf(rng.random_range(-8.0..-1.0));
        let Ok(q) = sub_p.prox_query(&x_i, delta) else {
            continue; // rank-deficient draw
        };
        let c = sub_p.prox_equivalence_constant(&q)?;
        let reference = reference_minimum(&q);
        let p_star = reference.value - c;
        let res = box_gp_solve(&sub_p, &x_i, delta, |_, _| true, SubsolverOptions::default())?;
        let p_y = sub_p.primal(&res.y);
        if res.duality_gap < p_y - p_star - 1e-10 {
            violations += 1;
        }
        if res.converged && prox_value_gap(&q, &res.y, reference.value) > delta + 1e-9 {
            violations += 1;
        }

        // Scaled-identity metric: matches soft-thresholding.
        let n = rng.random_range(1..=8);
        let cscale = rng.random_range(0.2..5.0);
        let q = ProxQuery::new(
            gaussian(n, 1.0, &mut rng),
            gaussian(n, 1.0, &mut rng),
            1e-12,
            Metric::scaled_identity(n, cscale)?,
            rng.random_range(0.05..1.0),
        )?;
        let sub_d = LassoSubproblem::from_prox_query(&q)?;
        let res = box_gp_solve(&sub_d, &q.x, q.delta, |_, _| true, SubsolverOptions::default())?;
        let exact = exact_prox_l1(&q.x, &q.g, q.lambda, cscale)?;
        // Strong convexity: ||y - y*||^2 <= 2 gap / c.
        let err = norm_inf(&sub(&res.y, &exact));
        worst_diag = worst_diag.max(err);
        if err > (2.0 * res.duality_gap.max(0.0) / cscale).sqrt() + 1e-9 {
            violations += 1;
        }
    }
    Ok(SuiteResult::new(
        "subsolver",
        2 * probes,
        violations,
        format!("max diagonal-metric error {worst_diag:e}"),
    ))
}

pub fn diagnostics_suite(opts: &VerifyOptions) -> Result<SuiteResult> {
    let n = if opts.quick { 200 } else { 400 };
    let spec = DatasetSpec::new(Shape::Tall, n, 4, opts.seed);
    let data = generate_data(&spec)?;
    let problem = CompositeProblem::lasso_uniform(
        data.a,
        data.b,
        spec.lambda,
        data.partition,
        MetricFamily::Gram,
    )?;
    let cal = calibrate_problem(&problem, 2000)?;
    let x0 = vec![0.0; problem.dim()];
    let mut checks = 0;
    let mut violations = 0;
    for sched in [ToleranceSchedule::InverseSquare(1.0), ToleranceSchedule::Fixed(1e-4)] {
        let cfg = SolverConfig::new(sched)
            .with_reference(cal.f_star, Some(cal.r_surrogate))
            .with_max_cycles(if opts.quick { 40 } else { 100 });
        let rec = run(&problem, &x0, &cfg)?;
        for w in rec.cycles.windows(2) {
            let (prev, c) = (&w[0], &w[1]);
            let tol = slack_tolerance(prev.f_value);
            checks += c.block_slacks.len() + 3;
            violations += c.block_slacks.iter().filter(|&&s| s < -tol).count();
            violations += usize::from(c.full_slack.is_some_and(|s| s < -tol));
            violations += usize::from(c.recurrence_slack.is_some_and(|s| s < -tol));
            violations += usize::from(c.f_value > prev.f_value + 1e-12);
        }
    }
    Ok(SuiteResult::new(
        "icbpg_diagnostics",
        checks,
        violations,
        format!("R surrogate {:.4e}; recurrence holds under surrogate only", cal.r_surrogate),
    ))
}

/// Runs the lemma grid for both kinds and writes the two grid CSVs.
/// Cells with `A0 < u` (a constant sequence below the floor meets the
/// hypotheses yet can exceed the bound) are counted separately and do not
/// fail the suite.
pub fn theory_suite(opts: &VerifyOptions, out: &Path) -> Result<SuiteResult> {
    let horizon = if opts.quick { 1000 } else { GRID_HORIZON };
    let mut checks = 0;
    let mut violations = 0;
    let mut below_floor = 0;
    for (kind, file) in [
        (GridKind::Fixed, "grid_fixed.csv"),
        (GridKind::Decreasing, "grid_decreasing.csv"),
    ] {
        let cells = sweep_grid(kind, horizon)?;
        write_grid_csv(&cells, &out.join(file))?;
        for c in &cells {
            checks += 1;
            if c.margin >= -GRID_MARGIN_TOL {
                continue;
            }
            let u = (c.delta_or_d * c.gamma).sqrt();
            if kind == GridKind::Fixed && c.a0 < u {
                below_floor += 1;
            } else {
                violations += 1;
            }
        }
    }
    Ok(SuiteResult::new(
        "theory_grid",
        checks,
        violations,
        format!("{below_floor} fixed-error cells with A0 < u exceed the bound"),
    ))
}

pub fn run_all(opts: &VerifyOptions, out: &Path) -> Result<VerifyReport> {
    fs::create_dir_all(out)?;
    let suites = vec![
        certificate_suite(opts)?,
        lipschitz_suite(opts)?,
        inclusion_suite(opts)?,
        subsolver_suite(opts)?,
        diagnostics_suite(opts)?,
        theory_suite(opts, out)?,
    ];
    let report = VerifyReport {
        suites,
        fault_injected: opts.inject_fault,
    };
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_at_gap_hits_the_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_query(6, 0.3, &mut rng);
        let r = reference_minimum(&q);
        let u = point_at_gap(&q, &r.point, r.value, 0.2, &mut rng);
        let gap = prox_value_gap(&q, &u, r.value);
        assert!((gap - 0.2).abs() < 1e-9, "gap {gap}");
    }
}
