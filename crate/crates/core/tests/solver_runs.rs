mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use icbpg::linalg::SparseCsc;
use icbpg::problem::{BlockPartition, CompositeProblem, MetricFamily};
use icbpg::solver::{run, RunRecord, SolverConfig, Termination, ToleranceSchedule};

fn small_problem(seed: u64, m: usize, sizes: Vec<usize>, family: MetricFamily) -> (CompositeProblem, Vec<Vec<f64>>, Vec<f64>) {
    let n: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..m).map(|_| gauss(n, &mut rng)).collect();
    let b = gauss(m, &mut rng);
    let a = SparseCsc::from_dense_rows(&rows).unwrap();
    let p = CompositeProblem::lasso_uniform(a, b.clone(), 0.1, BlockPartition::new(sizes).unwrap(), family).unwrap();
    (p, rows, b)
}

fn dense_objective(rows: &[Vec<f64>], b: &[f64], lambda: f64, x: &[f64]) -> f64 {
    let r: f64 = rows.iter().zip(b).map(|(row, bi)| (dot(row, x) - bi).powi(2)).sum();
    0.5 * r + lambda * l1(x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_never_increases(seed in 0u64..1000, d in 0.0..1.0f64) {
        let (p, _, _) = small_problem(seed, 30, vec![3, 4, 5], MetricFamily::Gram);
        for s in [ToleranceSchedule::Fixed(d * 1e-3), ToleranceSchedule::InverseSquare(d)] {
            let rec = run(&p, &vec![0.0; 12], &SolverConfig::new(s).with_max_cycles(30)).unwrap();
            for w in rec.cycles.windows(2) {
                prop_assert!(w[1].f_value <= w[0].f_value + 1e-12 * (1.0 + w[0].f_value.abs()));
            }
        }
    }

    #[test]
    fn recorded_values_match_dense_evaluation(seed in 0u64..1000) {
        let (p, rows, b) = small_problem(seed, 20, vec![4, 4], MetricFamily::Gram);
        let rec = run(&p, &vec![0.0; 8], &SolverConfig::new(ToleranceSchedule::InverseSquare(1.0)).with_max_cycles(60)).unwrap();
        let f = dense_objective(&rows, &b, 0.1, &rec.x);
        prop_assert!((rec.final_value() - f).abs() <= 1e-10 * (1.0 + f));
    }

    #[test]
    fn schedule_is_non_increasing(d in 0.0..10.0f64, k in 1usize..10_000) {
        for s in [ToleranceSchedule::Fixed(d), ToleranceSchedule::InverseSquare(d)] {
            prop_assert!(s.delta_at(k + 1).unwrap() <= s.delta_at(k).unwrap());
        }
    }
}

#[test]
fn exact_schedule_reaches_the_enumerated_minimum() {
    let (p, rows, b) = small_problem(3, 12, vec![1, 2], MetricFamily::Gram);
    let cfg = SolverConfig::new(ToleranceSchedule::Fixed(0.0)).with_max_cycles(400);
    let rec = run(&p, &[0.0; 3], &cfg).unwrap();
    let best = lasso_by_enumeration(&rows, &b, 0.1);
    assert!((rec.final_value() - best).abs() < 1e-9, "{} vs {best}", rec.final_value());
}

#[test]
fn target_stop_uses_the_reference() {
    let (p, _, _) = small_problem(5, 40, vec![5, 5], MetricFamily::Gram);
    let exact = run(&p, &[0.0; 10], &SolverConfig::new(ToleranceSchedule::Fixed(0.0)).with_max_cycles(500)).unwrap();
    let f_star = exact.final_value();
    let cfg = SolverConfig::new(ToleranceSchedule::InverseSquare(1.0))
        .with_reference(f_star, None)
        .with_target(1e-6)
        .with_max_cycles(500);
    let rec = run(&p, &[0.0; 10], &cfg).unwrap();
    assert_eq!(rec.termination, Termination::TargetReached);
    assert!(rec.final_value() - f_star <= 1e-6);
    assert_eq!(rec.first_cycle_below(1e-6), Some(rec.total_cycles()));
}

#[test]
fn block_diagnostics_cover_every_step() {
    let (p, _, _) = small_problem(8, 25, vec![2, 3, 4], MetricFamily::Gram);
    let cfg = SolverConfig::new(ToleranceSchedule::InverseSquare(1.0))
        .with_reference(0.0, Some(1.0))
        .with_max_cycles(10);
    let rec = run(&p, &[0.0; 9], &cfg).unwrap();
    for c in &rec.cycles[1..] {
        assert_eq!(c.block_slacks.len(), 3);
        assert_eq!(c.inner_iterations.len(), 3);
        assert!(c.full_slack.is_some());
        assert!(c.recurrence_slack.is_some());
    }
}

fn trace(rec: &RunRecord) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    rec.write_csv_to(&mut w).unwrap();
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

#[test]
fn trace_has_documented_columns() {
    let (p, _, _) = small_problem(2, 20, vec![3, 3], MetricFamily::Identity);
    let rec = run(&p, &[0.0; 6], &SolverConfig::new(ToleranceSchedule::Fixed(0.0)).with_max_cycles(4)).unwrap();
    let text = trace(&rec);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "cycle,delta_k,F_value,gap_to_ref,cpu_cycle_s,cpu_total_s,inner_iters_total,mondec_violations"
    );
    assert_eq!(lines.count(), 5);
}

#[test]
fn invalid_configs_are_rejected() {
    let (p, _, _) = small_problem(1, 10, vec![2], MetricFamily::Gram);
    let no_stop = SolverConfig::new(ToleranceSchedule::Fixed(0.0));
    assert!(run(&p, &[0.0; 2], &no_stop).is_err());
    let bad = SolverConfig::new(ToleranceSchedule::Fixed(-1.0)).with_max_cycles(1);
    assert!(run(&p, &[0.0; 2], &bad).is_err());
    let ok = SolverConfig::new(ToleranceSchedule::Fixed(0.0)).with_max_cycles(1);
    assert!(run(&p, &[0.0; 3], &ok).is_err());
    assert!(ToleranceSchedule::Custom(vec![1.0, 2.0]).validate().is_err());
}

#[test]
fn schedule_strings_round_trip() {
    for s in ["fixed:1e-4", "inv2:1"] {
        let parsed: ToleranceSchedule = s.parse().unwrap();
        assert_eq!(parsed.to_string(), s);
    }
    assert!("halve:2".parse::<ToleranceSchedule>().is_err());
}
