//! Synthetic sparse LASSO datasets, the `F*` calibration run and the
//! schedule-comparison experiment with its report files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{norm2, SparseCsc};
use crate::mmio::{read_matrix_market, read_vector, write_matrix_market, write_vector, Manifest};
use crate::problem::{BlockPartition, CompositeProblem, MetricFamily};
use crate::solver::{run, RunRecord, SolverConfig, ToleranceSchedule, DEFAULT_TARGET_REL};

pub const MATRIX_FILE: &str = "A.mtx";
pub const RHS_FILE: &str = "b.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const XHAT_FILE: &str = "x_hat.txt";
pub const RNG_NAME: &str = "ChaCha20";
pub const DEFAULT_NNZ_PER_COL: usize = 20;
pub const DEFAULT_BLOCKS: usize = 10;
pub const DEFAULT_N: usize = 2000;
/// Calibration relative-change stop.
pub const CALIBRATION_REL_CHANGE: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Shape {
    /// `N x N/2`
    Tall,
    /// `N x 2N`
    Wide,
}

impl Shape {
    pub fn default_lambda(self) -> f64 {
        match self {
            Shape::Tall => 0.1,
            Shape::Wide => 0.01,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Tall => "tall",
            Shape::Wide => "wide",
        })
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tall" => Ok(Shape::Tall),
            "wide" => Ok(Shape::Wide),
            other => Err(Error::InvalidArgument(format!("unknown shape '{other}' (tall, wide)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSpec {
    pub shape: Shape,
    pub n: usize,
    pub nnz_per_col: usize,
    pub p: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(shape: Shape, n: usize, p: usize, seed: u64) -> Self {
        Self {
            shape,
            n,
            nnz_per_col: DEFAULT_NNZ_PER_COL,
            p,
            lambda: shape.default_lambda(),
            seed,
        }
    }

    /// `(rows, columns)`
    pub fn dims(&self) -> (usize, usize) {
        match self.shape {
            Shape::Tall => (self.n, self.n / 2),
            Shape::Wide => (self.n, 2 * self.n),
        }
    }
}

/// Matrix, right-hand side and blocks produced from a spec, before writing.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub a: SparseCsc,
    pub b: Vec<f64>,
    pub partition: BlockPartition,
}

pub fn generate_data(spec: &DatasetSpec) -> Result<GeneratedData> {
    let (m, n) = spec.dims();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("empty {m}x{n} dataset")));
    }
    let partition = BlockPartition::near_equal(n, spec.p)?;
    if let Some(&big) = partition.sizes().iter().max() {
        if big > m {
            return Err(Error::InvalidArgument(format!(
                "block of {big} columns cannot have full rank with {m} rows"
            )));
        }
    }
    if spec.nnz_per_col > m {
        return Err(Error::InvalidArgument(format!(
            "{} nonzeros per column exceed {m} rows",
            spec.nnz_per_col
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut triplets = Vec::with_capacity(n * (spec.nnz_per_col + 1));
    for j in 0..n {
        for row in sample(&mut rng, m, spec.nnz_per_col).into_iter() {
            let v: f64 = rng.random::<f64>();
            triplets.push((row, j, v));
        }
    }
    // Identity in the top rows of each block's column range.
    for range in partition.ranges() {
        for (t, j) in range.enumerate() {
            triplets.push((t, j, 1.0));
        }
    }
    let a = SparseCsc::from_triplets(m, n, &triplets)?;
    let mut b: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let nb = norm2(&b);
    for v in &mut b {
        *v /= nb;
    }
    Ok(GeneratedData { a, b, partition })
}

/// Writes `A.mtx`, `b.txt` and `manifest.txt` into `dir`.
pub fn generate_dataset(spec: &DatasetSpec, dir: &Path) -> Result<GeneratedData> {
    let data = generate_data(spec)?;
    fs::create_dir_all(dir)?;
    write_matrix_market(&dir.join(MATRIX_FILE), &data.a)?;
    write_vector(&dir.join(RHS_FILE), &data.b)?;
    let (m, n) = spec.dims();
    let mut man = Manifest::new();
    man.set("shape", spec.shape);
    man.set("N", spec.n);
    man.set("m", m);
    man.set("n", n);
    man.set("p", spec.p);
    man.set("block_sizes", join(data.partition.sizes()));
    man.set("lambda", spec.lambda);
    man.set("nnz_per_col", spec.nnz_per_col);
    man.set("seed", spec.seed);
    man.set("rng", RNG_NAME);
    man.write(&dir.join(MANIFEST_FILE))?;
    Ok(data)
}

fn join(sizes: &[usize]) -> String {
    sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub f_star: f64,
    pub x_hat: Vec<f64>,
    /// `||x0 - x_hat||_B`, standing in for `R(x0)`.
    pub r_surrogate: f64,
    pub cycles: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub problem: CompositeProblem,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let man_path = dir.join(MANIFEST_FILE);
        let manifest = Manifest::read(&man_path)?;
        let a = read_matrix_market(&dir.join(MATRIX_FILE))?;
        let b = read_vector(&dir.join(RHS_FILE))?;
        let lambda: f64 = manifest.parse("lambda", &man_path)?;
        let sizes_raw: String = manifest.parse("block_sizes", &man_path)?;
        let sizes = sizes_raw
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Parse {
                path: man_path.clone(),
                msg: format!("bad block_sizes '{sizes_raw}'"),
            })?;
        let problem = CompositeProblem::lasso_uniform(
            a,
            b,
            lambda,
            BlockPartition::new(sizes)?,
            MetricFamily::Gram,
        )?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            problem,
        })
    }

    pub fn calibration(&self) -> Result<Calibration> {
        let path = self.dir.join(MANIFEST_FILE);
        if !self.manifest.contains("f_star") {
            return Err(Error::MissingCalibration(format!(
                "{} has no f_star; run calibrate first",
                path.display()
            )));
        }
        Ok(Calibration {
            f_star: self.manifest.parse("f_star", &path)?,
            r_surrogate: self.manifest.parse("r_surrogate", &path)?,
            cycles: self.manifest.parse("calibration_cycles", &path)?,
            x_hat: read_vector(&self.dir.join(XHAT_FILE))?,
        })
    }
}

/// Machine-precision run from `x0 = 0` for at most `budget` cycles.
pub fn calibrate_problem(problem: &CompositeProblem, budget: usize) -> Result<Calibration> {
    let mut cfg = SolverConfig::new(ToleranceSchedule::Fixed(0.0)).with_max_cycles(budget);
    cfg.rel_change = Some(CALIBRATION_REL_CHANGE);
    cfg.diagnostics = false;
    cfg.min_inner = 0;
    let x0 = vec![0.0; problem.dim()];
    let rec = run(problem, &x0, &cfg)?;
    let f_star = problem.full_objective(&rec.x)?;
    let r_surrogate = problem.global_b_norm(&rec.x)?;
    let cycles = rec.total_cycles();
    Ok(Calibration {
        f_star,
        x_hat: rec.x,
        r_surrogate,
        cycles,
    })
}

/// Calibrates the dataset in `dir` and stores the result in its manifest.
pub fn calibrate(dir: &Path, budget: usize) -> Result<Calibration> {
    let mut ds = Dataset::load(dir)?;
    let cal = calibrate_problem(&ds.problem, budget)?;
    write_vector(&dir.join(XHAT_FILE), &cal.x_hat)?;
    ds.manifest.set("f_star", format!("{:e}", cal.f_star));
    ds.manifest.set("r_surrogate", format!("{:e}", cal.r_surrogate));
    ds.manifest.set("calibration_cycles", cal.cycles);
    ds.manifest.set("calibration_budget", budget);
    ds.manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(cal)
}

/// The four schedules compared by default: `1/k^2` and fixed `1e-4, 1e-6, 1e-8`.
pub fn default_schedules() -> Vec<ToleranceSchedule> {
    vec![
        ToleranceSchedule::InverseSquare(1.0),
        ToleranceSchedule::Fixed(1e-4),
        ToleranceSchedule::Fixed(1e-6),
        ToleranceSchedule::Fixed(1e-8),
    ]
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub schedules: Vec<ToleranceSchedule>,
    /// Absolute target gap; `None` means `1e-6 (1 + |F*|)`.
    pub eps: Option<f64>,
    pub max_cycles: usize,
    pub repetitions: usize,
    /// Runs executing concurrently.
    pub threads: usize,
}

impl ExperimentPlan {
    pub fn new(data_dir: &Path, out_dir: &Path) -> Self {
        Self {
            data_dir: data_dir.to_path_buf(),
            out_dir: out_dir.to_path_buf(),
            schedules: default_schedules(),
            eps: None,
            max_cycles: 1000,
            repetitions: 1,
            threads: threads_from_env(),
        }
    }
}

/// `ICBPG_THREADS`, default 1.
pub fn threads_from_env() -> usize {
    std::env::var("ICBPG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(1)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleSummary {
    pub schedule: String,
    pub total_cycles: usize,
    pub total_cpu_s: f64,
    pub cpu_per_cycle_mean: f64,
    pub final_gap: f64,
    pub converged: bool,
    pub mondec_violations: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub eps: f64,
    pub calibration: Calibration,
    pub summaries: Vec<ScheduleSummary>,
    pub runs: Vec<RunRecord>,
}

pub fn schedule_file_label(s: &ToleranceSchedule) -> String {
    match s {
        ToleranceSchedule::Fixed(d) => format!("fixed_{d:e}"),
        ToleranceSchedule::InverseSquare(d) => format!("inv2_{d}"),
        ToleranceSchedule::Custom(v) => format!("custom_{}", v.len()),
    }
}

pub fn summarize(schedule: &ToleranceSchedule, rec: &RunRecord, f_star: f64, eps: f64) -> ScheduleSummary {
    let cycles = rec.total_cycles();
    let total: f64 = rec.cycles.iter().map(|c| c.cpu_cycle_s).sum();
    let gap = rec.final_value() - f_star;
    ScheduleSummary {
        schedule: schedule.to_string(),
        total_cycles: cycles,
        total_cpu_s: total,
        cpu_per_cycle_mean: if cycles > 0 { total / cycles as f64 } else { 0.0 },
        final_gap: gap,
        converged: gap <= eps,
        mondec_violations: rec.cycles.iter().map(|c| c.mondec_violations).sum(),
    }
}

/// Configuration used for one schedule of an experiment.
pub fn experiment_config(schedule: &ToleranceSchedule, cal: &Calibration, eps: f64, max_cycles: usize) -> SolverConfig {
    SolverConfig::new(schedule.clone())
        .with_reference(cal.f_star, Some(cal.r_surrogate))
        .with_target(eps)
        .with_max_cycles(max_cycles)
}

pub fn default_eps(f_star: f64) -> f64 {
    DEFAULT_TARGET_REL * (1.0 + f_star.abs())
}

/// Runs every schedule from `x0 = 0`, writing per-schedule traces,
/// `summary.csv`, plot data and `plot.py` into the output directory.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    let ds = Dataset::load(&plan.data_dir)?;
    let cal = ds.calibration()?;
    let eps = plan.eps.unwrap_or_else(|| default_eps(cal.f_star));
    for s in &plan.schedules {
        s.validate()?;
    }
    fs::create_dir_all(&plan.out_dir)?;
    let x0 = vec![0.0; ds.problem.dim()];
    let reps = plan.repetitions.max(1);

    let jobs: Vec<(usize, usize)> = (0..plan.schedules.len())
        .flat_map(|s| (0..reps).map(move |r| (s, r)))
        .collect();
    let mut results: Vec<Option<Result<RunRecord>>> = (0..jobs.len()).map(|_| None).collect();
    let threads = plan.threads.max(1);
    for chunk_start in (0..jobs.len()).step_by(threads) {
        let chunk = &jobs[chunk_start..(chunk_start + threads).min(jobs.len())];
        let outs: Vec<Result<RunRecord>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&(s, _)| {
                    let cfg = experiment_config(&plan.schedules[s], &cal, eps, plan.max_cycles);
                    let problem = &ds.problem;
                    let x0 = &x0;
                    scope.spawn(move || run(problem, x0, &cfg))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::NonConvergence("run panicked".into()))))
                .collect()
        });
        for (off, out) in outs.into_iter().enumerate() {
            results[chunk_start + off] = Some(out);
        }
    }

    let mut runs = Vec::with_capacity(plan.schedules.len());
    let mut summaries = Vec::with_capacity(plan.schedules.len());
    let mut all: Vec<Option<RunRecord>> = Vec::with_capacity(jobs.len());
    for r in results {
        all.push(Some(r.expect("every job ran")?));
    }
    for (s, sched) in plan.schedules.iter().enumerate() {
        // The repetition with the median total CPU time represents the schedule.
        let mut reps_here: Vec<RunRecord> = (0..reps)
            .map(|r| all[s * reps + r].take().expect("each run taken once"))
            .collect();
        reps_here.sort_by(|a, b| a.total_cpu().total_cmp(&b.total_cpu()));
        let rec = reps_here.swap_remove(reps_here.len() / 2);
        let label = schedule_file_label(sched);
        rec.write_csv(&plan.out_dir.join(format!("trace_{label}.csv")))?;
        summaries.push(summarize(sched, &rec, cal.f_star, eps));
        runs.push(rec);
    }

    write_summary(&plan.out_dir.join("summary.csv"), &summaries)?;
    write_plot_data(&plan.out_dir, &plan.schedules, &runs, cal.f_star)?;
    fs::write(plan.out_dir.join("plot.py"), PLOT_SCRIPT)?;
    Ok(ExperimentReport {
        eps,
        calibration: cal,
        summaries,
        runs,
    })
}

pub fn write_summary(path: &Path, summaries: &[ScheduleSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["schedule", "total_cycles", "total_cpu_s", "cpu_per_cycle_mean", "final_gap"])?;
    for s in summaries {
        w.write_record([
            s.schedule.clone(),
            s.total_cycles.to_string(),
            format!("{:.6e}", s.total_cpu_s),
            format!("{:.6e}", s.cpu_per_cycle_mean),
            format!("{:e}", s.final_gap),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_plot_data(dir: &Path, schedules: &[ToleranceSchedule], runs: &[RunRecord], f_star: f64) -> Result<()> {
    let mut by_cpu = csv::Writer::from_path(dir.join("gap_vs_cpu.csv"))?;
    let mut by_cycle = csv::Writer::from_path(dir.join("gap_vs_cycles.csv"))?;
    by_cpu.write_record(["schedule", "cpu_total_s", "gap"])?;
    by_cycle.write_record(["schedule", "cycle", "gap"])?;
    for (s, rec) in schedules.iter().zip(runs) {
        let name = s.to_string();
        for c in &rec.cycles {
            let gap = format!("{:e}", c.f_value - f_star);
            by_cpu.write_record([name.clone(), format!("{:.6e}", c.cpu_total_s), gap.clone()])?;
            by_cycle.write_record([name.clone(), c.k.to_string(), gap])?;
        }
    }
    by_cpu.flush()?;
    by_cycle.flush()?;
    Ok(())
}

const PLOT_SCRIPT: &str = r#"# Plots F(x^k) - F* against CPU time and cycles. Usage: python plot.py [DIR]
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent


def load(name, xcol):
    series = defaultdict(lambda: ([], []))
    with open(root / name, newline="") as fh:
        for row in csv.DictReader(fh):
            gap = float(row["gap"])
            if gap > 0:
                xs, ys = series[row["schedule"]]
                xs.append(float(row[xcol]))
                ys.append(gap)
    return series


for name, xcol, xlabel, out in [
    ("gap_vs_cpu.csv", "cpu_total_s", "CPU time (s)", "gap_vs_cpu.png"),
    ("gap_vs_cycles.csv", "cycle", "cycle", "gap_vs_cycles.png"),
]:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (xs, ys) in load(name, xcol).items():
        ax.semilogy(xs, ys, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("F(x^k) - F*")
    ax.legend()
    fig.tight_layout()
    fig.savefig(root / out, dpi=150)
"#;
