use std::fs;

use proptest::prelude::*;

use icbpg::bench::{
    calibrate, generate_data, generate_dataset, run_experiment, Dataset, DatasetSpec,
    ExperimentPlan, Shape, MANIFEST_FILE, MATRIX_FILE, RHS_FILE,
};
use icbpg::linalg::SparseCsc;
use icbpg::mmio::{read_matrix_market, read_vector, write_matrix_market, write_vector, Manifest};
use icbpg::solver::ToleranceSchedule;
use icbpg::Error;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matrix_market_round_trip(entries in prop::collection::vec((0usize..7, 0usize..5, -1e3..1e3f64), 0..30)) {
        let mut seen = std::collections::BTreeMap::new();
        for (i, j, v) in entries {
            seen.insert((i, j), v);
        }
        let trip: Vec<(usize, usize, f64)> = seen.into_iter().map(|((i, j), v)| (i, j, v)).collect();
        let a = SparseCsc::from_triplets(7, 5, &trip).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mtx");
        write_matrix_market(&p, &a).unwrap();
        prop_assert_eq!(read_matrix_market(&p).unwrap(), a);
    }

    #[test]
    fn vector_round_trip_is_exact(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..50)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        write_vector(&p, &v).unwrap();
        prop_assert_eq!(read_vector(&p).unwrap(), v);
    }
}

#[test]
fn generated_blocks_have_full_column_rank_padding() {
    for shape in [Shape::Tall, Shape::Wide] {
        let spec = DatasetSpec::new(shape, 200, 4, 1);
        let data = generate_data(&spec).unwrap();
        let (m, n) = spec.dims();
        assert_eq!((data.a.nrows(), data.a.ncols()), (m, n));
        let b_norm: f64 = data.b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((b_norm - 1.0).abs() < 1e-12);
        assert!(data.a.triplets().all(|(_, _, v)| (0.0..=2.0).contains(&v)));
        // Column t of each block carries a unit on row t.
        for rg in data.partition.ranges() {
            for (t, j) in rg.enumerate() {
                assert!(data.a.column(j).any(|(i, v)| i == t && v >= 1.0));
            }
        }
    }
}

#[test]
fn dataset_round_trip_and_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::new(Shape::Tall, 120, 3, 9);
    generate_dataset(&spec, dir.path()).unwrap();
    for f in [MATRIX_FILE, RHS_FILE, MANIFEST_FILE] {
        assert!(dir.path().join(f).exists());
    }
    let ds = Dataset::load(dir.path()).unwrap();
    assert!(matches!(ds.calibration(), Err(Error::MissingCalibration(_))));
    let cal = calibrate(dir.path(), 2000).unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    let stored = ds.calibration().unwrap();
    assert_eq!(stored.f_star.to_bits(), cal.f_star.to_bits());
    let f_hat = ds.problem.full_objective(&stored.x_hat).unwrap();
    assert!((f_hat - cal.f_star).abs() <= 1e-12 * (1.0 + f_hat.abs()));
    let m = Manifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.get("seed"), Some("9"));
    assert_eq!(m.get("shape"), Some("tall"));
}

#[test]
fn experiment_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let out = dir.path().join("o");
    generate_dataset(&DatasetSpec::new(Shape::Tall, 100, 4, 2), &data).unwrap();
    calibrate(&data, 3000).unwrap();
    let mut plan = ExperimentPlan::new(&data, &out);
    plan.schedules = vec![ToleranceSchedule::InverseSquare(1.0), ToleranceSchedule::Fixed(1e-8)];
    plan.threads = 2;
    let rep = run_experiment(&plan).unwrap();
    assert_eq!(rep.summaries.len(), 2);
    for f in ["summary.csv", "gap_vs_cpu.csv", "gap_vs_cycles.csv", "plot.py", "trace_inv2_1.csv", "trace_fixed_1e-8.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("schedule,total_cycles,total_cpu_s,cpu_per_cycle_mean,final_gap"));
    assert!(rep.summaries.iter().all(|s| s.converged));
}

#[test]
fn corrupt_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(Dataset::load(dir.path()).is_err());
    fs::write(dir.path().join("v.txt"), "1.0\nabc\n").unwrap();
    assert!(matches!(read_vector(&dir.path().join("v.txt")), Err(Error::Parse { .. })));
}
