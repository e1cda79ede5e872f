mod common;

use common::*;
use dcsched::broadcast::*;
use dcsched::ccp::InitBox;
use dcsched::sampler::analytic_moments;
use dcsched::{BroadcastPolicy, CcpOptions, MomentSet, SampleMatrix};
use proptest::prelude::*;

fn theta2(t: [f64; 4]) -> BroadcastPolicy {
    BroadcastPolicy::new(2, t.to_vec()).unwrap()
}

/// Dense Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let d = b.len();
    for col in 0..d {
        let pivot = (col..d).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..d {
            let f = a[row][col] / a[col][col];
            for k in col..d {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for row in (0..d).rev() {
        let tail: f64 = (row + 1..d).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}

#[test]
fn hand_examples() {
    let zero = theta2([0.0; 4]);
    let x = [3.0, 1.0];
    assert_eq!(sample_cost(&zero, &x), 1.0);
    assert_eq!(broadcast_schedule(&zero, &x).unwrap(), 0);
    assert_eq!(broadcast_sample_subgradient(&zero, &x).unwrap(), vec![0.0, 0.0, -6.0, -6.0]);
    let (f, g) = broadcast_doc_parts(&zero, &one_sample(&x)).unwrap();
    assert_eq!((f, g), (10.0, 9.0));
}

#[test]
fn reference_system() {
    let system = build_ccp_system(&analytic_moments(&reference_spec())).unwrap();
    assert_eq!(system.a_blocks[0], [[10.0, 2.0], [2.0, 2.0]]);
    assert_eq!(system.a_blocks[1], [[4.0, 1.0], [1.0, 2.0]]);
    assert_eq!(system.b, vec![4.2, 1.0, 4.2, 2.0]);
    let a = system.dense();
    let expected = 1.0 / (6.0 - 20.0f64.sqrt());
    assert!((ccp_step_size(&system) - expected).abs() < 1e-12);
    assert_eq!(a[0][1], 2.0);
    assert_eq!(a[0][2], 0.0);
}

#[test]
fn degenerate_moments_are_rejected() {
    let data = SampleMatrix::from_rows(&[[1.0, 2.0], [1.0, 3.0]]).unwrap();
    assert!(backend(data).moments().is_err());
    let constant = MomentSet {
        mean: vec![1.0, 0.0],
        second: vec![1.0, 0.0, 0.0, 1.0],
    };
    assert!(build_ccp_system(&constant).is_err());
}

#[test]
fn blockwise_solve_matches_dense_elimination() {
    let mut rng = rng(21);
    for k in 0..200 {
        let n = 2 + k % 4;
        let data = random_dataset(&mut rng, n, 25);
        let system = build_ccp_system(&backend(data).moments().unwrap()).unwrap();
        let rhs = normal_vec(&mut rng, system.b.len(), 3.0);
        let fast = system.solve(&rhs);
        let slow = dense_solve(system.dense(), rhs.clone());
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
        let back = system.apply(&fast);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn subgradient_matches_indicator_form() {
    let r = indicator_crosscheck_suite(1000, 22);
    assert!(r.passed, "{}", r.detail);
}

#[test]
fn subgradient_inequality() {
    let r = subgradient_suite(100, 50, 23);
    assert!(r.passed, "{}", r.detail);
}

#[test]
fn step_equivalence() {
    let r = step_equivalence_suite(200, 24);
    assert!(r.passed, "{}", r.detail);
}

#[test]
fn converged_point_is_a_ccp_fixed_point() {
    let mut rng = rng(25);
    let b = backend(random_dataset(&mut rng, 2, 2000));
    let system = build_ccp_system(&b.moments().unwrap()).unwrap();
    let best = broadcast_multistart(&b, 8, None, 3, &CcpOptions::default()).unwrap();
    let g = broadcast_subgradient(&best.best, &b).unwrap();
    let a_theta = system.apply(best.best.theta());
    let residual: f64 = a_theta
        .iter()
        .zip(&system.b)
        .zip(&g)
        .map(|((a, b), g)| (a - b - g).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(residual <= 0.05, "fixed-point residual {residual}");
}

#[test]
fn multistart_with_one_restart_is_a_single_run() {
    let mut rng = rng(26);
    let b = backend(random_dataset(&mut rng, 3, 150));
    let bx = InitBox::new(vec![-1.0; 12], vec![1.0; 12]).unwrap();
    let opts = CcpOptions::default();
    let multi = broadcast_multistart(&b, 1, Some(&bx), 4, &opts).unwrap();
    let init = BroadcastPolicy::new(3, bx.draw(4, 0)).unwrap();
    let (single, trace) = broadcast_ccp(&init, &b, &opts).unwrap();
    assert_eq!(multi.best, single);
    assert_eq!(multi.traces[0], trace);
}

#[test]
fn wide_problems_use_the_general_path() {
    // Six sensors exercise the scratch-buffer path rather than a sized kernel.
    let mut rng = rng(27);
    let data = random_dataset(&mut rng, 6, 30);
    let p = random_broadcast(&mut rng, 6);
    let b = backend(data.clone());
    let by_rows = data.rows().map(|x| broadcast_oracle_cost(p.theta(), x)).sum::<f64>() / 30.0;
    let j = broadcast_objective(&p, &b).unwrap();
    assert!((j - by_rows).abs() <= 1e-9 * by_rows.max(1.0));
    let (f, g) = broadcast_doc_parts(&p, &b).unwrap();
    assert!((f - g - j).abs() <= 1e-9 * f.max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_minimizes_the_realized_cost(seed in any::<u64>(), n in 2usize..6) {
        let mut rng = rng(seed);
        let p = random_broadcast(&mut rng, n);
        let x = normal_vec(&mut rng, n, 3.0);
        let j = broadcast_schedule(&p, &x).unwrap();
        prop_assert_eq!(broadcast_cost_if(p.theta(), &x, j), broadcast_oracle_cost(p.theta(), &x));
    }

    #[test]
    fn zero_subgradient_block_is_the_scheduled_sensor(seed in any::<u64>(), n in 2usize..6) {
        let mut rng = rng(seed);
        let p = random_broadcast(&mut rng, n);
        let x = normal_vec(&mut rng, n, 3.0);
        let j = broadcast_schedule(&p, &x).unwrap();
        let g = broadcast_sample_subgradient(&p, &x).unwrap();
        let width = 2 * (n - 1);
        prop_assert!(g[j * width..(j + 1) * width].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ccp_descends(seed in any::<u64>(), n in 2usize..4) {
        let mut rng = rng(seed);
        let b = backend(random_dataset(&mut rng, n, 100));
        let (_, trace) = broadcast_ccp(&random_broadcast(&mut rng, n), &b, &CcpOptions::default()).unwrap();
        for w in trace.objective_values.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        prop_assert!(trace.step_size.unwrap() > 0.0);
    }
}
