//! Rate bounds for I-CBPG and an extremal simulator for the recurrence
//! `A_{l+1}^2 / gamma <= A_l - A_{l+1} + Delta_{l+1}`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Problem constants entering the rates. `r` is `R(x0)` (or a surrogate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemConstants {
    pub l_min: f64,
    pub l_max: f64,
    pub l_f: f64,
    pub p: usize,
    pub r: f64,
}

impl ProblemConstants {
    /// `8 p (L_f + L_max)^2 R^2 / L_min`
    pub fn gamma(&self) -> f64 {
        let s = self.l_f + self.l_max;
        8.0 * self.p as f64 * s * s * self.r * self.r / self.l_min
    }

    /// `L_min [3p + (L_max^2 / 4) ((R sqrt2 + sqrt(p delta1)) / ((L_f + L_max) R))^2]`,
    /// the factor multiplying `delta_{k+1}` in the recurrence.
    pub fn delta_coefficient(&self, delta1: f64) -> Result<f64> {
        if !(self.r > 0.0) {
            return Err(Error::InvalidArgument(format!("R = {} must be > 0", self.r)));
        }
        if !(self.l_min > 0.0) {
            return Err(Error::InvalidArgument(format!("L_min = {} must be > 0", self.l_min)));
        }
        let p = self.p as f64;
        let ratio = (self.r * 2f64.sqrt() + (p * delta1.max(0.0)).sqrt())
            / ((self.l_f + self.l_max) * self.r);
        Ok(self.l_min * (3.0 * p + 0.25 * self.l_max * self.l_max * ratio * ratio))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateConstants {
    pub gamma: f64,
    /// Fixed-error floor `sqrt(Delta gamma)`.
    pub u: f64,
    /// Decreasing-error constant `D = D~ * coefficient`.
    pub d: f64,
    pub d_tilde: f64,
    /// `F(x0) - F*`
    pub a0: f64,
}

impl RateConstants {
    pub fn fixed(pc: &ProblemConstants, delta: f64, a0: f64) -> Result<Self> {
        let gamma = pc.gamma();
        let big_delta = pc.delta_coefficient(delta)? * delta;
        Ok(Self {
            gamma,
            u: (big_delta * gamma).sqrt(),
            d: 0.0,
            d_tilde: 0.0,
            a0,
        })
    }

    pub fn decreasing(pc: &ProblemConstants, d_tilde: f64, delta1: f64, a0: f64) -> Result<Self> {
        Ok(Self {
            gamma: pc.gamma(),
            u: 0.0,
            d: d_tilde * pc.delta_coefficient(delta1)?,
            d_tilde,
            a0,
        })
    }

    /// The recurrence lemma assumes `gamma >= 1`.
    pub fn lemma_hypothesis_met(&self) -> bool {
        self.gamma >= 1.0
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// `A_0 .. A_K`
    pub a: Vec<f64>,
    pub gamma_below_one: bool,
}

/// Largest `t >= 0` with `t^2 / gamma + t <= c`.
fn recurrence_root(gamma: f64, c: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    // gamma/2 (sqrt(1 + 4c/gamma) - 1), written without cancellation
    2.0 * c / (1.0 + (1.0 + 4.0 * c / gamma).sqrt())
}

/// Extremal sequence for the recurrence with equality, kept non-increasing:
/// `A_{l+1} = min(A_l, root)` where `root` solves `t^2/gamma + t = A_l + Delta_{l+1}`.
/// `deltas[l]` is `Delta_{l+1}`; the horizon is `deltas.len()`.
pub fn simulate_worst_case(gamma: f64, deltas: &[f64], a0: f64) -> Result<Simulation> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} must be > 0")));
    }
    if !(a0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("A0 = {a0} must be >= 0")));
    }
    if deltas.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidArgument("Delta sequence must be non-negative".into()));
    }
    if deltas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("Delta sequence must be non-increasing".into()));
    }
    let mut a = Vec::with_capacity(deltas.len() + 1);
    a.push(a0);
    let mut cur = a0;
    for &d in deltas {
        cur = cur.min(recurrence_root(gamma, cur + d));
        a.push(cur);
    }
    Ok(Simulation {
        a,
        gamma_below_one: gamma < 1.0,
    })
}

fn geometric_term(a0: f64, k: usize) -> f64 {
    0.5f64.powf((k as f64 - 1.0) / 2.0) * a0
}

/// `max{4 gamma (A0 - u) / ((k-1)(A0 + 3u)) + u, (1/2)^((k-1)/2) A0}`, `u = sqrt(Delta gamma)`.
pub fn lemma_bound_fixed(gamma: f64, big_delta: f64, a0: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}, need k >= 2")));
    }
    let u = (big_delta * gamma).sqrt();
    Ok(fixed_bound_from_u(gamma, u, a0, k))
}

fn fixed_bound_from_u(gamma: f64, u: f64, a0: f64, k: usize) -> f64 {
    let denom = (k as f64 - 1.0) * (a0 + 3.0 * u);
    let rate = if denom > 0.0 {
        4.0 * gamma * (a0 - u) / denom + u
    } else {
        u
    };
    rate.max(geometric_term(a0, k))
}

/// `max{16 gamma / (k-3), 8 sqrt(D gamma) / (k-3), (1/2)^((k-1)/2) A0}`
pub fn lemma_bound_decreasing(gamma: f64, d: f64, a0: f64, k: usize) -> Result<f64> {
    if k < 4 {
        return Err(Error::InvalidArgument(format!("k = {k}, need k >= 4")));
    }
    let km3 = k as f64 - 3.0;
    Ok((16.0 * gamma / km3)
        .max(8.0 * (d * gamma).sqrt() / km3)
        .max(geometric_term(a0, k)))
}

pub fn theorem_fixed_bound(pc: &ProblemConstants, delta: f64, f0_gap: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}, need k >= 2")));
    }
    let rc = RateConstants::fixed(pc, delta, f0_gap)?;
    Ok(fixed_bound_from_u(rc.gamma, rc.u, f0_gap, k))
}

/// Cycles after which the fixed-error bound is `<= eps`. Requires `eps > u`.
pub fn corollary_fixed_k(pc: &ProblemConstants, delta: f64, f0_gap: f64, eps: f64) -> Result<u64> {
    let rc = RateConstants::fixed(pc, delta, f0_gap)?;
    if !(eps > rc.u) {
        return Err(Error::BelowErrorFloor { eps, floor: rc.u });
    }
    let geo = 2.0 / std::f64::consts::LN_2 * (f0_gap / eps).ln();
    let rate = 4.0 * rc.gamma * (f0_gap - rc.u) / ((eps - rc.u) * (f0_gap + 3.0 * rc.u));
    let k = 1.0 + geo.max(rate).ceil();
    Ok(k.max(2.0) as u64)
}

pub fn theorem_decreasing_bound(
    pc: &ProblemConstants,
    d_tilde: f64,
    delta1: f64,
    f0_gap: f64,
    k: usize,
) -> Result<f64> {
    let rc = RateConstants::decreasing(pc, d_tilde, delta1, f0_gap)?;
    lemma_bound_decreasing(rc.gamma, rc.d, f0_gap, k)
}

pub fn corollary_decreasing_k(
    pc: &ProblemConstants,
    d_tilde: f64,
    delta1: f64,
    f0_gap: f64,
    eps: f64,
) -> Result<u64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be > 0")));
    }
    let rc = RateConstants::decreasing(pc, d_tilde, delta1, f0_gap)?;
    let geo = 1.0 + 2.0 / std::f64::consts::LN_2 * (f0_gap / eps).ln();
    let a = 3.0 + 16.0 * rc.gamma / eps;
    let b = 3.0 + 8.0 * (rc.d * rc.gamma).sqrt() / eps;
    Ok(geo.max(a).max(b).ceil() as u64)
}

/// Per-step classification of a trajectory by the appendix cases.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CaseCounts {
    /// `A_{l+1} / A_l <= 1/2` (or `A_l = 0`)
    pub geometric: usize,
    /// slow ratio, constant `Delta`
    pub slow_constant: usize,
    /// slow ratio, `Delta_{l+1} / (A_l A_{l+1}) < 1/(4 gamma)`
    pub slow_small_delta: usize,
    /// slow ratio, `Delta_{l+1} / (A_l A_{l+1}) >= 1/(4 gamma)`
    pub slow_large_delta: usize,
}

impl CaseCounts {
    pub fn slow_total(&self) -> usize {
        self.slow_constant + self.slow_small_delta + self.slow_large_delta
    }

    pub fn label(&self) -> String {
        format!(
            "c1={};c2i={};c2ii={};c2iii={}",
            self.geometric, self.slow_constant, self.slow_small_delta, self.slow_large_delta
        )
    }
}

pub fn classify_cases(a: &[f64], deltas: &[f64], gamma: f64, constant_delta: bool) -> CaseCounts {
    let mut c = CaseCounts::default();
    for l in 0..a.len().saturating_sub(1) {
        let (cur, next) = (a[l], a[l + 1]);
        if cur <= 0.0 || next / cur <= 0.5 {
            c.geometric += 1;
        } else if constant_delta {
            c.slow_constant += 1;
        } else if deltas[l] / (cur * next) < 1.0 / (4.0 * gamma) {
            c.slow_small_delta += 1;
        } else {
            c.slow_large_delta += 1;
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GridKind {
    Fixed,
    Decreasing,
}

/// Worst-margin summary of one `(gamma, Delta or D, A0)` cell.
#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub kind: GridKind,
    pub gamma: f64,
    pub delta_or_d: f64,
    pub a0: f64,
    /// `k` attaining the smallest margin
    pub k: usize,
    pub a_k: f64,
    pub bound: f64,
    /// `bound - A_k` at that `k`
    pub margin: f64,
    pub violations: usize,
    pub cases: CaseCounts,
}

pub const GRID_GAMMAS: [f64; 3] = [1.0, 10.0, 100.0];
pub const GRID_DELTAS: [f64; 3] = [0.0, 1e-4, 1e-2];
pub const GRID_A0: [f64; 3] = [0.1, 1.0, 10.0];
pub const GRID_HORIZON: usize = 10_000;
pub const GRID_MARGIN_TOL: f64 = 1e-12;

pub fn sweep_cell(kind: GridKind, gamma: f64, c: f64, a0: f64, horizon: usize) -> Result<GridCell> {
    let deltas: Vec<f64> = match kind {
        GridKind::Fixed => vec![c; horizon],
        GridKind::Decreasing => (1..=horizon).map(|l| c / (l * l) as f64).collect(),
    };
    let sim = simulate_worst_case(gamma, &deltas, a0)?;
    let first_k = match kind {
        GridKind::Fixed => 2,
        GridKind::Decreasing => 4,
    };
    let mut worst = (first_k, f64::INFINITY, 0.0, 0.0);
    let mut violations = 0;
    for k in first_k..=horizon {
        let bound = match kind {
            GridKind::Fixed => lemma_bound_fixed(gamma, c, a0, k)?,
            GridKind::Decreasing => lemma_bound_decreasing(gamma, c, a0, k)?,
        };
        let margin = bound - sim.a[k];
        if margin < -GRID_MARGIN_TOL {
            violations += 1;
        }
        if margin < worst.1 {
            worst = (k, margin, sim.a[k], bound);
        }
    }
    Ok(GridCell {
        kind,
        gamma,
        delta_or_d: c,
        a0,
        k: worst.0,
        a_k: worst.2,
        bound: worst.3,
        margin: worst.1,
        violations,
        cases: classify_cases(&sim.a, &deltas, gamma, kind == GridKind::Fixed),
    })
}

/// The 3x3x3 grid for one kind, in deterministic order.
pub fn sweep_grid(kind: GridKind, horizon: usize) -> Result<Vec<GridCell>> {
    let mut cells = Vec::with_capacity(27);
    for &g in &GRID_GAMMAS {
        for &d in &GRID_DELTAS {
            for &a0 in &GRID_A0 {
                cells.push(sweep_cell(kind, g, d, a0, horizon)?);
            }
        }
    }
    Ok(cells)
}

pub fn write_grid_csv(cells: &[GridCell], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["gamma", "Delta_or_D", "A0", "k", "A_k", "bound", "margin", "case_counts"])?;
    for c in cells {
        w.write_record([
            c.gamma.to_string(),
            c.delta_or_d.to_string(),
            c.a0.to_string(),
            c.k.to_string(),
            format!("{:e}", c.a_k),
            format!("{:e}", c.bound),
            format!("{:e}", c.margin),
            c.cases.label(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one line per cell to `out` for a human reader.
pub fn report_grid(cells: &[GridCell], out: &mut dyn Write) -> std::io::Result<()> {
    for c in cells {
        writeln!(
            out,
            "{:?} gamma={} c={} A0={} worst k={} margin={:e} violations={} {}",
            c.kind,
            c.gamma,
            c.delta_or_d,
            c.a0,
            c.k,
            c.margin,
            c.violations,
            c.cases.label()
        )?;
    }
    Ok(())
}
