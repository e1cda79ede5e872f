//! Independent oracles and random problem generators shared by the property
//! suites and the acceptance target.

#![allow(dead_code)]

use dcsched::broadcast::{
    broadcast_ccp, broadcast_ccp_step, broadcast_doc_parts, broadcast_objective, broadcast_sample_subgradient,
    broadcast_subgradient, build_ccp_system, sample_cost as broadcast_cost,
};
use dcsched::unicast::{
    sample_cost as unicast_cost, unicast_ccp, unicast_ccp_step, unicast_doc_parts, unicast_objective,
    unicast_sample_subgradient, unicast_subgradient,
};
use dcsched::{
    BroadcastPolicy, CcpOptions, ExpectationBackend, GaussianMixtureSpec, MixtureComponent, SampleMatrix,
    UnicastPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Correlated, shifted Gaussian data: `x = m + L z` with a random lower
/// triangular `L` whose diagonal is bounded away from zero.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, count: usize) -> SampleMatrix {
    let mean = normal_vec(rng, n, 1.5);
    let mut lower = vec![vec![0.0; n]; n];
    for (i, row) in lower.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate().take(i + 1) {
            *v = if i == j {
                rng.random_range(0.5..2.0)
            } else {
                rng.random_range(-1.0..1.0)
            };
        }
    }
    let mut flat = Vec::with_capacity(n * count);
    for _ in 0..count {
        let z = normal_vec(rng, n, 1.0);
        for i in 0..n {
            flat.push(mean[i] + (0..=i).map(|k| lower[i][k] * z[k]).sum::<f64>());
        }
    }
    SampleMatrix::from_flat(flat, n).unwrap()
}

pub fn backend(data: SampleMatrix) -> ExpectationBackend {
    ExpectationBackend::empirical(data)
}

pub fn one_sample(x: &[f64]) -> ExpectationBackend {
    backend(SampleMatrix::from_flat(x.to_vec(), x.len()).unwrap())
}

pub fn random_unicast(rng: &mut ChaCha8Rng, n: usize) -> UnicastPolicy {
    UnicastPolicy::new(normal_vec(rng, n, 2.0)).unwrap()
}

pub fn random_broadcast(rng: &mut ChaCha8Rng, n: usize) -> BroadcastPolicy {
    BroadcastPolicy::new(n, normal_vec(rng, 2 * n * (n - 1), 1.0)).unwrap()
}

/// Position of `(w_ij, b_ij)` in θ, written out from the documented layout:
/// block `j` holds the pairs for receivers `i ≠ j` in increasing `i`.
pub fn theta_index(n: usize, i: usize, j: usize) -> usize {
    let within = if i < j { i } else { i - 1 };
    j * 2 * (n - 1) + 2 * within
}

/// Unicast cost of scheduling sensor `j`: every other estimator holds `x̂ᵢ`.
pub fn unicast_cost_if(xhat: &[f64], x: &[f64], j: usize) -> f64 {
    (0..x.len()).filter(|&i| i != j).map(|i| (x[i] - xhat[i]).powi(2)).sum()
}

pub fn unicast_oracle_cost(xhat: &[f64], x: &[f64]) -> f64 {
    (0..x.len()).map(|j| unicast_cost_if(xhat, x, j)).fold(f64::INFINITY, f64::min)
}

pub fn unicast_oracle_g(xhat: &[f64], data: &SampleMatrix) -> f64 {
    data.rows()
        .map(|x| x.iter().zip(xhat).map(|(a, b)| (a - b).powi(2)).fold(0.0, f64::max))
        .sum::<f64>()
        / data.n_samples() as f64
}

/// Broadcast cost of scheduling sensor `j`: estimator `i` predicts
/// `w_ij x_j + b_ij`.
pub fn broadcast_cost_if(theta: &[f64], x: &[f64], j: usize) -> f64 {
    let n = x.len();
    (0..n)
        .filter(|&i| i != j)
        .map(|i| {
            let k = theta_index(n, i, j);
            (x[i] - theta[k] * x[j] - theta[k + 1]).powi(2)
        })
        .sum()
}

pub fn broadcast_oracle_cost(theta: &[f64], x: &[f64]) -> f64 {
    (0..x.len()).map(|j| broadcast_cost_if(theta, x, j)).fold(f64::INFINITY, f64::min)
}

/// `max_j Σ_{ℓ≠j} S_ℓ`, averaged over the data.
pub fn broadcast_oracle_g(theta: &[f64], data: &SampleMatrix) -> f64 {
    let n = data.n_sensors();
    data.rows()
        .map(|x| {
            let s: Vec<f64> = (0..n).map(|l| broadcast_cost_if(theta, x, l)).collect();
            let total: f64 = s.iter().sum();
            s.iter().map(|sl| total - sl).fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / data.n_samples() as f64
}

/// The n = 2 broadcast subgradient written entry by entry in the indicator
/// form `(w21, b21, w12, b12)`.
pub fn indicator_subgradient_n2(theta: &[f64], x: &[f64]) -> [f64; 4] {
    let (w21, b21, w12, b12) = (theta[0], theta[1], theta[2], theta[3]);
    let (x1, x2) = (x[0], x[1]);
    let r12 = x1 - w12 * x2 - b12;
    let r21 = x2 - w21 * x1 - b21;
    let first = if r12.abs() < r21.abs() { 1.0 } else { 0.0 };
    let second = if r12.abs() >= r21.abs() { 1.0 } else { 0.0 };
    [
        -2.0 * (x1 * r21 * first),
        -2.0 * (r21 * first),
        -2.0 * (x2 * r12 * second),
        -2.0 * (r12 * second),
    ]
}

/// Outcome of one suite: passed flag plus a one-line summary.
pub struct SuiteResult {
    pub passed: bool,
    pub detail: String,
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.abs().max(1.0)
}

/// Per-sample DoC identities for `pairs` random (policy, sample) draws in
/// each mode with `n` cycling through 2..=5.
pub fn doc_identity_suite(pairs: usize, seed: u64) -> SuiteResult {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for k in 0..pairs {
        let n = 2 + k % 4;
        let x = normal_vec(&mut rng, n, 3.0);
        let b = one_sample(&x);

        let u = random_unicast(&mut rng, n);
        let (f, g) = unicast_doc_parts(&u, &b).unwrap();
        let oracle = unicast_oracle_cost(&u.xhat, &x);
        worst = worst
            .max(rel_err(f - g, oracle, f))
            .max(rel_err(unicast_cost(&u.xhat, &x), oracle, f))
            .max(rel_err(unicast_objective(&u, &b).unwrap(), oracle, f));

        let p = random_broadcast(&mut rng, n);
        let (f, g) = broadcast_doc_parts(&p, &b).unwrap();
        let oracle = broadcast_oracle_cost(p.theta(), &x);
        worst = worst
            .max(rel_err(f - g, oracle, f))
            .max(rel_err(broadcast_cost(&p, &x), oracle, f))
            .max(rel_err(broadcast_objective(&p, &b).unwrap(), oracle, f));
    }
    SuiteResult {
        passed: worst <= 1e-9,
        detail: format!("{pairs} pairs per mode, worst relative error {worst:.3e}"),
    }
}

/// CCP monotonicity and termination on random empirical backends.
pub fn descent_suite(backends: usize, seed: u64) -> SuiteResult {
    let mut rng = rng(seed);
    let opts = CcpOptions::default();
    let mut runs = 0usize;
    let mut converged = 0usize;
    let mut worst_rise = 0.0f64;
    for k in 0..backends {
        let n = 2 + k % 2;
        let count = if k % 4 < 2 { 100 } else { 1000 };
        let data = random_dataset(&mut rng, n, count);
        let b = backend(data);

        let init = random_unicast(&mut rng, n);
        let (_, trace) = unicast_ccp(&init, &b, &opts).unwrap();
        let init = random_broadcast(&mut rng, n);
        let (_, btrace) = broadcast_ccp(&init, &b, &opts).unwrap();
        for t in [trace, btrace] {
            runs += 1;
            converged += usize::from(t.converged);
            for w in t.objective_values.windows(2) {
                worst_rise = worst_rise.max(w[1] - w[0]);
            }
        }
    }
    let rate = converged as f64 / runs as f64;
    SuiteResult {
        passed: worst_rise <= 1e-9 && rate >= 0.9,
        detail: format!("{runs} traces, largest rise {worst_rise:.3e}, terminated early in {:.1}%", 100.0 * rate),
    }
}

/// Subgradient inequality `G(z) ≥ G(θ) + gᵀ(z − θ)` at random points.
pub fn subgradient_suite(points: usize, probes: usize, seed: u64) -> SuiteResult {
    let mut rng = rng(seed);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..points {
        let n = 2 + k % 3;
        let data = random_dataset(&mut rng, n, 12);
        let b = backend(data.clone());

        let u = random_unicast(&mut rng, n);
        let g = unicast_subgradient(&u, &b).unwrap();
        let at = unicast_oracle_g(&u.xhat, &data);
        for _ in 0..probes {
            let z: Vec<f64> = u.xhat.iter().map(|v| v + rng.random_range(-3.0..3.0)).collect();
            let lin: f64 = g.iter().zip(z.iter().zip(&u.xhat)).map(|(g, (z, x))| g * (z - x)).sum();
            let gz = unicast_oracle_g(&z, &data);
            worst = worst.max((at + lin - gz) / gz.abs().max(1.0));
        }

        let p = random_broadcast(&mut rng, n);
        let g = broadcast_subgradient(&p, &b).unwrap();
        let at = broadcast_oracle_g(p.theta(), &data);
        for _ in 0..probes {
            let z: Vec<f64> = p.theta().iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
            let lin: f64 = g.iter().zip(z.iter().zip(p.theta())).map(|(g, (z, x))| g * (z - x)).sum();
            let gz = broadcast_oracle_g(&z, &data);
            worst = worst.max((at + lin - gz) / gz.abs().max(1.0));
        }
    }
    SuiteResult {
        passed: worst <= 1e-9,
        detail: format!("{points} points x {probes} probes per mode, largest violation {worst:.3e}"),
    }
}

/// CCP steps against their preconditioned-subgradient forms.
pub fn step_equivalence_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut rng = rng(seed);
    let mut worst_u = 0.0f64;
    let mut worst_b = 0.0f64;
    for k in 0..cases {
        let n = 2 + k % 4;
        let data = random_dataset(&mut rng, n, 30);
        let b = backend(data.clone());
        let mean = data.column_means();

        let u = random_unicast(&mut rng, n);
        let g = normal_vec(&mut rng, n, 3.0);
        let next = unicast_ccp_step(&u, &mean, &g).unwrap();
        for i in 0..n {
            let grad_f = 2.0 * (u.xhat[i] - mean[i]);
            let reference = u.xhat[i] - 0.5 * (grad_f - g[i]);
            let scale = u.xhat[i].abs() + mean[i].abs() + g[i].abs();
            worst_u = worst_u.max((next.xhat[i] - reference).abs() / scale.max(1.0));
        }

        let moments = b.moments().unwrap();
        let system = build_ccp_system(&moments).unwrap();
        let p = random_broadcast(&mut rng, n);
        let g = normal_vec(&mut rng, p.theta().len(), 3.0);
        let next = broadcast_ccp_step(&system, &g).unwrap();
        // θ⁺ = θ − A⁻¹(∇F(θ) − g) with ∇F(θ) = Aθ − b.
        let a_theta = system.apply(p.theta());
        let grad_f: Vec<f64> = a_theta.iter().zip(&system.b).map(|(a, b)| a - b).collect();
        let diff: Vec<f64> = grad_f.iter().zip(&g).map(|(f, g)| f - g).collect();
        let correction = system.solve(&diff);
        for (idx, (t, c)) in p.theta().iter().zip(&correction).enumerate() {
            let reference = t - c;
            let scale = t.abs() + c.abs() + next.theta()[idx].abs();
            worst_b = worst_b.max((next.theta()[idx] - reference).abs() / scale.max(1.0));
        }
    }
    SuiteResult {
        passed: worst_u <= 1e-14 && worst_b <= 1e-10,
        detail: format!("{cases} cases, unicast {worst_u:.3e}, broadcast {worst_b:.3e} (relative)"),
    }
}

/// Library subgradient versus the explicit n = 2 indicator form.
pub fn indicator_crosscheck_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut rng = rng(seed);
    let mut mismatches = 0usize;
    for _ in 0..cases {
        let p = random_broadcast(&mut rng, 2);
        let x = normal_vec(&mut rng, 2, 3.0);
        let lib = broadcast_sample_subgradient(&p, &x).unwrap();
        if lib.as_slice() != indicator_subgradient_n2(p.theta(), &x).as_slice() {
            mismatches += 1;
        }
    }
    SuiteResult {
        passed: mismatches == 0,
        detail: format!("{cases} random inputs, {mismatches} mismatches"),
    }
}

/// CCP terminal points against a brute-force grid around them.
/// Checks the CCP terminal point against a 201×201 grid of the given half-width
/// centred on it.
pub fn grid_oracle_suite(problems: usize, half_width: f64, seed: u64) -> SuiteResult {
    let spacing = half_width / 100.0;
    let mut rng = rng(seed);
    let opts = CcpOptions::default();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..problems {
        let data = random_dataset(&mut rng, 2, 50);
        let b = backend(data.clone());
        let init = random_unicast(&mut rng, 2);
        let (p, trace) = unicast_ccp(&init, &b, &opts).unwrap();
        let j_star = trace.final_objective();
        let mean_cost = |z: &[f64]| data.rows().map(|x| unicast_oracle_cost(z, x)).sum::<f64>() / 50.0;
        for a in 0..=200 {
            for c in 0..=200 {
                let z = [
                    p.xhat[0] + (a as f64 - 100.0) * spacing,
                    p.xhat[1] + (c as f64 - 100.0) * spacing,
                ];
                worst = worst.max(j_star - mean_cost(&z));
            }
        }
    }
    SuiteResult {
        passed: worst <= 1e-6,
        detail: format!("{problems} problems, half-width {half_width}, largest grid improvement {worst:.3e}"),
    }
}

pub fn reference_spec() -> GaussianMixtureSpec {
    GaussianMixtureSpec::reference_bivariate()
}

pub fn small_mixture() -> GaussianMixtureSpec {
    GaussianMixtureSpec::new(vec![
        MixtureComponent {
            weight: 0.6,
            mean: vec![0.0, 1.0, -1.0],
            covariance: vec![vec![1.0, 0.3, 0.0], vec![0.3, 2.0, 0.5], vec![0.0, 0.5, 1.5]],
        },
        MixtureComponent {
            weight: 0.4,
            mean: vec![2.0, -1.0, 0.5],
            covariance: vec![vec![0.5, 0.0, 0.1], vec![0.0, 1.0, 0.0], vec![0.1, 0.0, 0.8]],
        },
    ])
    .unwrap()
}

pub fn unicast_sample_subgradient_ok(p: &UnicastPolicy, x: &[f64]) -> Vec<f64> {
    unicast_sample_subgradient(p, x).unwrap()
}
