mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use icbpg::linalg::SparseCsc;
use icbpg::problem::{BlockPartition, CompositeProblem, MetricFamily};
use icbpg::prox::prox_value_gap;
use icbpg::subsolver::{
    box_gp_solve, build_subproblem, build_subproblem_checked, lifted_trajectory, LassoSubproblem,
    SubsolverOptions,
};
use icbpg::Error;

fn instance(seed: u64, m: usize, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..m).map(|_| gauss(n, &mut rng)).collect();
    let b = gauss(m, &mut rng);
    (rows, b)
}

fn sub(rows: &[Vec<f64>], b: &[f64], lambda: f64) -> LassoSubproblem {
    let a = SparseCsc::from_dense_rows(rows).unwrap();
    LassoSubproblem::new(Arc::new(a), b.to_vec(), lambda).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn three_dim_block_meets_tolerance(seed in 0u64..1000, lambda in 0.01..1.0f64, e in 2.0..10.0f64) {
        let delta = 10f64.powf(-e);
        let (rows, b) = instance(seed, 6, 3);
        let s = sub(&rows, &b, lambda);
        let p_star = lasso_by_enumeration(&rows, &b, lambda);
        let res = box_gp_solve(&s, &[0.0; 3], delta, |_, _| true, SubsolverOptions::default()).unwrap();
        prop_assert!(res.converged);
        prop_assert!(res.duality_gap <= delta);
        prop_assert!(s.primal(&res.y) - p_star <= delta + 1e-12);
    }

    #[test]
    fn gap_bounds_suboptimality(seed in 0u64..1000, lambda in 0.01..1.0f64) {
        let (rows, b) = instance(seed, 5, 3);
        let s = sub(&rows, &b, lambda);
        let p_star = lasso_by_enumeration(&rows, &b, lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
        let y = gauss(3, &mut rng);
        prop_assert!(s.duality_gap(&y) >= (s.primal(&y) - p_star).max(0.0) - 1e-10);
    }

    #[test]
    fn lifted_objective_never_increases(seed in 0u64..1000, lambda in 0.01..1.0f64) {
        let (rows, b) = instance(seed, 8, 4);
        let s = sub(&rows, &b, lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let traj = lifted_trajectory(&s, &gauss(4, &mut rng), 200);
        for w in traj.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn result_is_a_prox_set_member(seed in 0u64..1000, lambda in 0.01..1.0f64, e in 2.0..8.0f64) {
        let delta = 10f64.powf(-e);
        let (rows, b) = instance(seed, 7, 4);
        let s = sub(&rows, &b, lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 11);
        let xi = gauss(4, &mut rng);
        let q = s.prox_query(&xi, delta).unwrap();
        let c = s.prox_equivalence_constant(&q).unwrap();
        let p_star = lasso_by_enumeration(&rows, &b, lambda);
        let res = box_gp_solve(&s, &xi, delta, |_, _| true, SubsolverOptions::default()).unwrap();
        prop_assert!(prox_value_gap(&q, &res.y, p_star + c) <= delta + 1e-9);
        // Warm start: never worse than where it began.
        prop_assert!(s.primal(&res.y) <= s.primal(&xi) + 1e-12);
    }
}

#[test]
fn dead_zone_returns_zero_immediately() {
    let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let b = vec![0.05, -0.02];
    let s = sub(&rows, &b, 0.1);
    assert_eq!(s.duality_gap(&[0.0, 0.0]), 0.0);
    let res = box_gp_solve(&s, &[0.0, 0.0], 1e-12, |_, _| true, SubsolverOptions::default()).unwrap();
    assert_eq!(res.inner_iterations, 0);
    assert_eq!(res.y, vec![0.0, 0.0]);
}

#[test]
fn guard_failure_is_reported() {
    let (rows, b) = instance(4, 6, 3);
    let s = sub(&rows, &b, 0.2);
    let res = box_gp_solve(&s, &[0.0; 3], 1e-6, |_, _| false, SubsolverOptions::default()).unwrap();
    assert!(!res.f_decrease_satisfied);
    assert!(res.duality_gap <= 1e-6);
}

#[test]
fn b_tilde_matches_dense_oracle() {
    let (rows, b) = instance(9, 12, 6);
    let a = SparseCsc::from_dense_rows(&rows).unwrap();
    let problem = CompositeProblem::lasso_uniform(
        a,
        b.clone(),
        0.1,
        BlockPartition::new(vec![2, 4]).unwrap(),
        MetricFamily::Identity,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = gauss(6, &mut rng);
    let r: Vec<f64> = (0..12).map(|i| dot(&rows[i], &x) - b[i]).collect();
    for (i, cols) in [(0usize, 0..2usize), (1, 2..6)] {
        let s = build_subproblem_checked(&problem, &x, &r, i).unwrap();
        for row in 0..12 {
            let others: f64 = (0..6).filter(|j| !cols.contains(j)).map(|j| rows[row][j] * x[j]).sum();
            assert!((s.b_tilde()[row] - (b[row] - others)).abs() < 1e-12);
        }
    }
    let mut stale = r.clone();
    stale[0] += 1.0;
    assert!(matches!(
        build_subproblem_checked(&problem, &x, &stale, 0),
        Err(Error::StaleResidual(_))
    ));
    if cfg!(debug_assertions) {
        assert!(build_subproblem(&problem, &x, &stale, 0).is_err());
    }
}
