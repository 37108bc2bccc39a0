use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use icbpg::bench::{
    self, calibrate, default_eps, experiment_config, generate_dataset, run_experiment,
    schedule_file_label, summarize, Dataset, DatasetSpec, ExperimentPlan, Shape,
};
use icbpg::solver::{run, ToleranceSchedule};
use icbpg::verify::{self, VerifyOptions};

#[derive(Parser)]
#[command(name = "icbpg", version, about = "Inexact cyclic block proximal gradient for sparse LASSO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sparse LASSO dataset.
    Generate {
        #[arg(long, default_value = "tall")]
        shape: Shape,
        /// Size parameter N (tall: N x N/2, wide: N x 2N).
        #[arg(long = "n", default_value_t = bench::DEFAULT_N)]
        size: usize,
        #[arg(long, default_value_t = bench::DEFAULT_BLOCKS)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the shape's default lambda.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the F* reference and R surrogate and store them in the manifest.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5000)]
        budget: usize,
    },
    /// Run one schedule and write its trace.
    Run {
        #[arg(long)]
        data: PathBuf,
        /// inv2:DTILDE or fixed:DELTA
        #[arg(long, default_value = "inv2:1")]
        schedule: ToleranceSchedule,
        /// Target gap; defaults to 1e-6 (1 + |F*|).
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        max_cycles: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the four default schedules.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        max_cycles: usize,
        #[arg(long, default_value_t = 1)]
        repetitions: usize,
    },
    /// Run the invariant suites; exits nonzero on any violation.
    Verify {
        /// Fewer random probes.
        #[arg(long)]
        quick: bool,
        /// Inflate certificate residuals to check that the suite catches it.
        #[arg(long)]
        inject_fault: bool,
        #[arg(long, default_value = "verify_out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Generate {
            shape,
            size,
            p,
            seed,
            lambda,
            out,
        } => {
            let mut spec = DatasetSpec::new(shape, size, p, seed);
            if let Some(l) = lambda {
                spec.lambda = l;
            }
            let data = generate_dataset(&spec, &out)
                .with_context(|| format!("generating into {}", out.display()))?;
            println!(
                "wrote {}x{} matrix ({} nonzeros, {} blocks) to {}",
                data.a.nrows(),
                data.a.ncols(),
                data.a.nnz(),
                p,
                out.display()
            );
        }
        Command::Calibrate { data, budget } => {
            let cal = calibrate(&data, budget)?;
            println!(
                "F* = {:.15e}  R = {:.6e}  cycles = {}",
                cal.f_star, cal.r_surrogate, cal.cycles
            );
        }
        Command::Run {
            data,
            schedule,
            eps,
            max_cycles,
            out,
        } => {
            let ds = Dataset::load(&data)?;
            let cal = ds.calibration()?;
            let eps = eps.unwrap_or_else(|| default_eps(cal.f_star));
            let cfg = experiment_config(&schedule, &cal, eps, max_cycles);
            let rec = run(&ds.problem, &vec![0.0; ds.problem.dim()], &cfg)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("trace_{}.csv", schedule_file_label(&schedule)));
            rec.write_csv(&path)?;
            let s = summarize(&schedule, &rec, cal.f_star, eps);
            println!(
                "{}: {} cycles, {:.3} s CPU, final gap {:e} ({:?}); trace in {}",
                s.schedule,
                s.total_cycles,
                s.total_cpu_s,
                s.final_gap,
                rec.termination,
                path.display()
            );
        }
        Command::Compare {
            data,
            out,
            eps,
            max_cycles,
            repetitions,
        } => {
            let mut plan = ExperimentPlan::new(&data, &out);
            plan.eps = eps;
            plan.max_cycles = max_cycles;
            plan.repetitions = repetitions;
            let report = run_experiment(&plan)?;
            println!("target gap {:e}", report.eps);
            println!("{:<14} {:>7} {:>10} {:>12} {:>12}", "schedule", "cycles", "cpu_s", "cpu/cycle", "final_gap");
            for s in &report.summaries {
                println!(
                    "{:<14} {:>7} {:>10.3} {:>12.4e} {:>12.3e}",
                    s.schedule, s.total_cycles, s.total_cpu_s, s.cpu_per_cycle_mean, s.final_gap
                );
            }
            println!("reports in {}", out.display());
        }
        Command::Verify {
            quick,
            inject_fault,
            out,
            seed,
        } => {
            let opts = VerifyOptions {
                quick,
                inject_fault,
                seed,
            };
            let report = verify::run_all(&opts, &out)?;
            for s in &report.suites {
                println!(
                    "[{}] {:<22} {} checks, {} violations  {}",
                    if s.passed { "PASS" } else { "FAIL" },
                    s.name,
                    s.checks,
                    s.violations,
                    s.detail
                );
            }
            println!("summary in {}", out.join(verify::SUMMARY_FILE).display());
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
