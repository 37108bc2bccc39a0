//! The I-CBPG outer loop: cyclic inexact block prox steps under a tolerance
//! schedule, with per-step sufficient-decrease and recurrence diagnostics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cputime::thread_cpu_seconds;
use crate::error::{Error, Result};
use crate::linalg::{norm1, norm2_sq};
use crate::problem::{CompositeProblem, MetricFamily};
use crate::prox::exact_prox_l1;
use crate::subsolver::{box_gp_solve, build_subproblem, lifted_lipschitz, SubsolverOptions};
use crate::theory::ProblemConstants;

/// Residual is recomputed from scratch every this many cycles.
pub const FULL_RECOMPUTE_EVERY: usize = 50;
/// Default stopping target relative to `1 + |F*|`.
pub const DEFAULT_TARGET_REL: f64 = 1e-6;
/// Slack below which a diagnostic counts as violated, relative to `1 + |F|`.
pub const SLACK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ToleranceSchedule {
    Fixed(f64),
    /// `delta_k = D~ / k^2`
    InverseSquare(f64),
    /// `delta_k = list[k-1]`, holding the last value past the end.
    Custom(Vec<f64>),
}

impl ToleranceSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Fixed(d) | Self::InverseSquare(d) if !(*d >= 0.0) || !d.is_finite() => Err(
                Error::InvalidArgument(format!("schedule constant {d} must be finite and >= 0")),
            ),
            Self::Custom(v) if v.is_empty() => {
                Err(Error::InvalidArgument("empty custom schedule".into()))
            }
            Self::Custom(v) if v.iter().any(|d| !(*d >= 0.0)) => {
                Err(Error::InvalidArgument("custom schedule has a negative entry".into()))
            }
            Self::Custom(v) if v.windows(2).any(|w| w[1] > w[0]) => {
                Err(Error::InvalidArgument("custom schedule is not non-increasing".into()))
            }
            _ => Ok(()),
        }
    }

    /// `delta_k` for `k >= 1`.
    pub fn delta_at(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::InvalidArgument("schedules are 1-indexed; k = 0".into()));
        }
        Ok(match self {
            Self::Fixed(d) => *d,
            Self::InverseSquare(d) => d / (k as f64 * k as f64),
            Self::Custom(v) => v[(k - 1).min(v.len() - 1)],
        })
    }

    /// Smallest `D~` with `delta_k <= D~ / k^2` over the first `horizon` cycles.
    pub fn inverse_square_constant(&self, horizon: usize) -> Result<f64> {
        let mut d = 0.0f64;
        for k in 1..=horizon.max(1) {
            d = d.max(self.delta_at(k)? * (k * k) as f64);
        }
        Ok(d)
    }
}

impl fmt::Display for ToleranceSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(d) => write!(f, "fixed:{d:e}"),
            Self::InverseSquare(d) => write!(f, "inv2:{d}"),
            Self::Custom(v) => write!(f, "custom:{}", v.len()),
        }
    }
}

/// Parses `fixed:DELTA` or `inv2:DTILDE`.
impl FromStr for ToleranceSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("schedule '{s}': expected KIND:VALUE")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("schedule '{s}': bad number")))?;
        let sched = match kind.trim() {
            "fixed" => Self::Fixed(v),
            "inv2" => Self::InverseSquare(v),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown schedule kind '{other}' (fixed, inv2)"
                )))
            }
        };
        sched.validate()?;
        Ok(sched)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub schedule: ToleranceSchedule,
    /// Reference optimal value; enables the target stop and gap columns.
    pub f_star: Option<f64>,
    /// Stop once `F - F* <= target_eps`.
    pub target_eps: Option<f64>,
    pub max_cycles: Option<usize>,
    /// Stop once `|F(x^k) - F(x^{k+1})| <= rel_change * (1 + |F|)`.
    pub rel_change: Option<f64>,
    /// `R(x0)` surrogate for the recurrence diagnostic.
    pub r_surrogate: Option<f64>,
    pub diagnostics: bool,
    pub max_inner: usize,
    pub min_inner: usize,
    /// Recorded for provenance; the solve is single-threaded and always deterministic.
    pub deterministic: bool,
}

impl SolverConfig {
    pub fn new(schedule: ToleranceSchedule) -> Self {
        Self {
            schedule,
            f_star: None,
            target_eps: None,
            max_cycles: None,
            rel_change: None,
            r_surrogate: None,
            diagnostics: true,
            max_inner: crate::subsolver::DEFAULT_MAX_INNER,
            min_inner: 1,
            deterministic: true,
        }
    }

    pub fn with_max_cycles(mut self, k: usize) -> Self {
        self.max_cycles = Some(k);
        self
    }

    pub fn with_reference(mut self, f_star: f64, r_surrogate: Option<f64>) -> Self {
        self.f_star = Some(f_star);
        self.r_surrogate = r_surrogate;
        self
    }

    pub fn with_target(mut self, eps: f64) -> Self {
        self.target_eps = Some(eps);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.target_eps.is_some() && self.f_star.is_none() {
            return Err(Error::InvalidArgument("target gap needs an F* reference".into()));
        }
        if self.target_eps.is_none() && self.max_cycles.is_none() && self.rel_change.is_none() {
            return Err(Error::InvalidArgument("no stopping criterion set".into()));
        }
        if let Some(r) = self.r_surrogate {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument(format!("R surrogate {r} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CycleRecord {
    pub k: usize,
    pub f_value: f64,
    /// Tolerance used to produce `x^k` (0 for `k = 0`).
    pub delta_k: f64,
    pub cpu_cycle_s: f64,
    pub cpu_total_s: f64,
    pub inner_iterations: Vec<usize>,
    /// Per block, `3 L_i delta + F(x^{k,i-1}) - F(x^{k,i}) - L_i/4 ||step||_(i)^2`.
    pub block_slacks: Vec<f64>,
    /// Per block `F` before each step; `F(x^{k,0})` first.
    pub block_f_values: Vec<f64>,
    pub full_slack: Option<f64>,
    pub recurrence_slack: Option<f64>,
    /// `||x^{k-1} - x^k||_B`
    pub step_norm_b: f64,
    pub mondec_violations: usize,
    pub nonconverged_blocks: usize,
}

impl CycleRecord {
    pub fn inner_total(&self) -> usize {
        self.inner_iterations.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    TargetReached,
    RelativeChange,
    MaxCycles,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub config: SolverConfig,
    pub cycles: Vec<CycleRecord>,
    pub x: Vec<f64>,
    pub termination: Termination,
}

impl RunRecord {
    pub fn final_value(&self) -> f64 {
        self.cycles.last().map_or(f64::NAN, |c| c.f_value)
    }

    /// Number of completed cycles.
    pub fn total_cycles(&self) -> usize {
        self.cycles.len() - 1
    }

    pub fn total_cpu(&self) -> f64 {
        self.cycles.last().map_or(0.0, |c| c.cpu_total_s)
    }

    pub fn gap_to_ref(&self, c: &CycleRecord) -> Option<f64> {
        self.config.f_star.map(|fs| c.f_value - fs)
    }

    /// First cycle whose gap is `<= eps`.
    pub fn first_cycle_below(&self, eps: f64) -> Option<usize> {
        let fs = self.config.f_star?;
        self.cycles.iter().find(|c| c.f_value - fs <= eps).map(|c| c.k)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record([
            "cycle",
            "delta_k",
            "F_value",
            "gap_to_ref",
            "cpu_cycle_s",
            "cpu_total_s",
            "inner_iters_total",
            "mondec_violations",
        ])?;
        for c in &self.cycles {
            w.write_record([
                c.k.to_string(),
                format!("{:e}", c.delta_k),
                format!("{:.17e}", c.f_value),
                self.gap_to_ref(c).map_or(String::new(), |g| format!("{g:.17e}")),
                format!("{:.6e}", c.cpu_cycle_s),
                format!("{:.6e}", c.cpu_total_s),
                c.inner_total().to_string(),
                c.mondec_violations.to_string(),
            ])?;
        }
        Ok(())
    }
}

/// `3 L_i delta + F_prev - F_new - (L_i / 4) step^2`
pub fn check_sufficient_decrease_block(
    f_prev: f64,
    f_new: f64,
    step_norm: f64,
    l_i: f64,
    delta: f64,
) -> f64 {
    3.0 * l_i * delta + f_prev - f_new - 0.25 * l_i * step_norm * step_norm
}

/// `3 L_min p delta + F(x^k) - F(x^{k+1}) - (L_min / 4) ||x^k - x^{k+1}||_B^2`
pub fn check_sufficient_decrease_full(
    f_k: f64,
    f_next: f64,
    step_norm_b: f64,
    l_min: f64,
    p: usize,
    delta: f64,
) -> f64 {
    3.0 * l_min * p as f64 * delta + f_k - f_next - 0.25 * l_min * step_norm_b * step_norm_b
}

/// Right side minus left side of the gap recurrence
/// `(1/gamma) [F(x^{k+1}) - F*]^2 <= F(x^k) - F(x^{k+1}) + c(delta1) delta_{k+1}`.
pub fn check_recurrence(
    f_k: f64,
    f_next: f64,
    f_star: f64,
    constants: &ProblemConstants,
    delta1: f64,
    delta: f64,
) -> Result<f64> {
    let coef = constants.delta_coefficient(delta1)?;
    let gap = f_next - f_star;
    Ok(f_k - f_next + coef * delta - gap * gap / constants.gamma())
}

/// Scale used for slack tolerances.
pub fn slack_tolerance(f: f64) -> f64 {
    SLACK_TOL * (1.0 + f.abs())
}

pub fn problem_constants(problem: &CompositeProblem, r: f64) -> ProblemConstants {
    ProblemConstants {
        l_min: problem.l_min(),
        l_max: problem.l_max(),
        l_f: problem.l_f(),
        p: problem.num_blocks(),
        r,
    }
}

/// Runs I-CBPG from `x0`.
pub fn run(problem: &CompositeProblem, x0: &[f64], config: &SolverConfig) -> Result<RunRecord> {
    config.validate()?;
    if x0.len() != problem.dim() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, problem has {}",
            x0.len(),
            problem.dim()
        )));
    }
    let p = problem.num_blocks();
    let smooth = problem.smooth();
    let delta1 = config.schedule.delta_at(1)?;
    let constants = config.r_surrogate.map(|r| problem_constants(problem, r));
    let lifted: Vec<f64> = match problem.family() {
        MetricFamily::Gram => (0..p).map(|i| lifted_lipschitz(smooth.block(i))).collect(),
        MetricFamily::Identity => Vec::new(),
    };
    let sub_opts = SubsolverOptions {
        max_inner: config.max_inner,
        min_inner: config.min_inner,
        stop_on_stall: true,
    };

    let mut x = x0.to_vec();
    let mut r = smooth.residual(&x);
    let mut psi: Vec<f64> = problem
        .partition()
        .ranges()
        .enumerate()
        .map(|(i, rg)| problem.lambda(i) * norm1(&x[rg]))
        .collect();
    let mut f_smooth = 0.5 * norm2_sq(&r);
    let mut f_cur = f_smooth + psi.iter().sum::<f64>();

    let cpu_start = thread_cpu_seconds();
    let mut cycles = vec![CycleRecord {
        k: 0,
        f_value: f_cur,
        delta_k: 0.0,
        cpu_cycle_s: 0.0,
        cpu_total_s: 0.0,
        inner_iterations: Vec::new(),
        block_slacks: Vec::new(),
        block_f_values: Vec::new(),
        full_slack: None,
        recurrence_slack: None,
        step_norm_b: 0.0,
        mondec_violations: 0,
        nonconverged_blocks: 0,
    }];

    let target_hit = |f: f64| match (config.f_star, config.target_eps) {
        (Some(fs), Some(eps)) => f - fs <= eps,
        _ => false,
    };

    let termination = loop {
        let k = cycles.len() - 1;
        if target_hit(f_cur) {
            break Termination::TargetReached;
        }
        if k >= 1 {
            if let Some(tol) = config.rel_change {
                let prev = cycles[k - 1].f_value;
                if (prev - f_cur).abs() <= tol * (1.0 + f_cur.abs()) {
                    break Termination::RelativeChange;
                }
            }
        }
        if config.max_cycles.is_some_and(|m| k >= m) {
            break Termination::MaxCycles;
        }

        let t0 = thread_cpu_seconds();
        let delta = config.schedule.delta_at(k + 1)?;
        let f_start = f_cur;
        let mut inner = Vec::with_capacity(p);
        let mut slacks = Vec::with_capacity(p);
        let mut f_values = Vec::with_capacity(p);
        let mut step_sq = 0.0;
        let mut mondec_violations = 0;
        let mut nonconverged = 0;

        for i in 0..p {
            let range = problem.partition().range(i);
            let block = smooth.block(i);
            let l_i = problem.block_metric(i).lipschitz;
            let xi = x[range.clone()].to_vec();
            let f_before = f_cur;
            let (y, iters) = match problem.family() {
                MetricFamily::Gram => {
                    let sub = build_subproblem(problem, &x, &r, i)?
                        .with_lifted_lipschitz(lifted[i]);
                    let f_old = sub.smooth_value(&xi);
                    let res = box_gp_solve(&sub, &xi, delta, |_, fv| fv <= f_old, sub_opts)?;
                    if !res.converged {
                        if delta == 0.0 {
                            return Err(Error::NonConvergence(format!(
                                "block {i} in cycle {k}: gap {:e} after {} inner iterations",
                                res.duality_gap, res.inner_iterations
                            )));
                        }
                        nonconverged += 1;
                    }
                    if !res.f_decrease_satisfied {
                        mondec_violations += 1;
                    }
                    (res.y, res.inner_iterations)
                }
                MetricFamily::Identity => {
                    let g = block.tr_mul_vec(&r);
                    (exact_prox_l1(&xi, &g, problem.lambda(i), l_i)?, 0)
                }
            };
            let d: Vec<f64> = y.iter().zip(&xi).map(|(a, b)| a - b).collect();
            let ad = block.mul_vec(&d);
            for (rj, adj) in r.iter_mut().zip(&ad) {
                *rj += adj;
            }
            let block_step_sq = match problem.family() {
                MetricFamily::Gram => norm2_sq(&ad),
                MetricFamily::Identity => norm2_sq(&d),
            };
            x[range].copy_from_slice(&y);
            psi[i] = problem.lambda(i) * norm1(&y);
            let f_smooth_new = 0.5 * norm2_sq(&r);
            if problem.family() == MetricFamily::Identity && f_smooth_new > f_smooth {
                mondec_violations += 1;
            }
            f_smooth = f_smooth_new;
            f_cur = f_smooth + psi.iter().sum::<f64>();
            step_sq += block_step_sq;
            inner.push(iters);
            f_values.push(f_before);
            if config.diagnostics {
                slacks.push(check_sufficient_decrease_block(
                    f_before,
                    f_cur,
                    block_step_sq.sqrt(),
                    l_i,
                    delta,
                ));
            }
        }

        if (k + 1) % FULL_RECOMPUTE_EVERY == 0 {
            r = smooth.residual(&x);
            f_smooth = 0.5 * norm2_sq(&r);
            f_cur = f_smooth + psi.iter().sum::<f64>();
        }

        let step_norm_b = step_sq.sqrt();
        let (full_slack, recurrence_slack) = if config.diagnostics {
            let full = check_sufficient_decrease_full(
                f_start,
                f_cur,
                step_norm_b,
                problem.l_min(),
                p,
                delta,
            );
            let rec = match (constants.as_ref(), config.f_star) {
                (Some(c), Some(fs)) => Some(check_recurrence(f_start, f_cur, fs, c, delta1, delta)?),
                _ => None,
            };
            (Some(full), rec)
        } else {
            (None, None)
        };

        let t1 = thread_cpu_seconds();
        cycles.push(CycleRecord {
            k: k + 1,
            f_value: f_cur,
            delta_k: delta,
            cpu_cycle_s: t1 - t0,
            cpu_total_s: t1 - cpu_start,
            inner_iterations: inner,
            block_slacks: slacks,
            block_f_values: f_values,
            full_slack,
            recurrence_slack,
            step_norm_b,
            mondec_violations,
            nonconverged_blocks: nonconverged,
        });
    };

    Ok(RunRecord {
        config: config.clone(),
        cycles,
        x,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SparseCsc;
    use crate::problem::BlockPartition;

    #[test]
    fn schedule_values() {
        let s = ToleranceSchedule::InverseSquare(1.0);
        assert_eq!(s.delta_at(1).unwrap(), 1.0);
        assert_eq!(s.delta_at(3).unwrap(), 1.0 / 9.0);
        assert_eq!(ToleranceSchedule::Fixed(1e-4).delta_at(17).unwrap(), 1e-4);
        assert!(s.delta_at(0).is_err());
        assert!(ToleranceSchedule::Custom(vec![1.0, 2.0]).validate().is_err());
        assert_eq!("inv2:1".parse::<ToleranceSchedule>().unwrap(), s);
        assert_eq!(
            "fixed:1e-6".parse::<ToleranceSchedule>().unwrap(),
            ToleranceSchedule::Fixed(1e-6)
        );
        assert!("linear:1".parse::<ToleranceSchedule>().is_err());
    }

    #[test]
    fn slack_examples() {
        assert!((check_sufficient_decrease_block(2.0, 2.0, 0.0, 1.0, 0.1) - 0.3).abs() < 1e-15);
        assert_eq!(check_sufficient_decrease_full(2.0, 2.0, 0.0, 1.0, 4, 0.5), 6.0);
        let pc = ProblemConstants {
            l_min: 1.0,
            l_max: 1.0,
            l_f: 2.0,
            p: 2,
            r: 1.0,
        };
        let s = check_recurrence(3.0, 1.0, 1.0, &pc, 0.0, 0.0).unwrap();
        assert_eq!(s, 2.0);
        let zero_r = ProblemConstants { r: 0.0, ..pc };
        assert!(check_recurrence(3.0, 1.0, 1.0, &zero_r, 0.0, 0.0).is_err());
    }

    #[test]
    fn config_needs_a_stop() {
        let c = SolverConfig::new(ToleranceSchedule::Fixed(0.0));
        assert!(c.validate().is_err());
        let c = SolverConfig::new(ToleranceSchedule::Fixed(0.0)).with_target(1e-3);
        assert!(c.validate().is_err());
    }

    #[test]
    fn objective_never_increases() {
        let a = SparseCsc::from_dense_rows(&[
            vec![1.0, 0.3, 0.0, 0.2],
            vec![0.0, 1.0, 0.5, 0.0],
            vec![0.4, 0.0, 1.0, 0.1],
            vec![0.0, 0.2, 0.0, 1.0],
            vec![0.3, 0.3, 0.3, 0.3],
        ])
        .unwrap();
        let p = CompositeProblem::lasso_uniform(
            a,
            vec![1.0, -1.0, 0.5, 0.2, 0.7],
            0.05,
            BlockPartition::new(vec![2, 2]).unwrap(),
            MetricFamily::Gram,
        )
        .unwrap();
        let cfg = SolverConfig::new(ToleranceSchedule::InverseSquare(1.0)).with_max_cycles(30);
        let rec = run(&p, &[0.0; 4], &cfg).unwrap();
        assert_eq!(rec.total_cycles(), 30);
        for w in rec.cycles.windows(2) {
            assert!(w[1].f_value <= w[0].f_value + 1e-12);
        }
    }
}
