//! Broadcast networks: every estimator hears the scheduled measurement `x_j`
//! and uses it as side information through the affine rule
//! `x̂ᵢ = w_ij·x_j + b_ij`.
//!
//! Write `r_iℓ = xᵢ − w_iℓ·x_ℓ − b_iℓ` and `S_ℓ = Σ_{i≠ℓ} r_iℓ²` (the error
//! left behind when sensor ℓ transmits). The per-sample cost is `min_j S_j`,
//! which splits as `F − G` with `F = Σ_ℓ S_ℓ` and `G = max_j Σ_{ℓ≠j} S_ℓ`.
//! `F` is a convex quadratic in `θ` whose Hessian is the block-diagonal
//! matrix `A`, so each CCP step solves `A·θ⁺ = g + b` one 2×2 block at a time.

use serde::{Deserialize, Serialize};

use crate::ccp::{self, CcpOptions, InitBox, Multistart};
use crate::error::Result;
use crate::model::{check_dim, BroadcastPolicy, CcpTrace, MomentSet};
use crate::reduce::{sum_rows_sized, sum_rows_with};
use crate::sampler::ExpectationBackend;

/// The θ-independent quadratic part of the CCP surrogate, `½θᵀAθ − bᵀθ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcpLinearSystem {
    n_sensors: usize,
    /// `A_j = 2·[[E[X_j²], E[X_j]], [E[X_j], 1]]`, applied to every pair in
    /// block `j`.
    pub a_blocks: Vec<[[f64; 2]; 2]>,
    /// Block `j` stacks `2·[E[XᵢX_j], E[Xᵢ]]` for `i ≠ j`.
    pub b: Vec<f64>,
}

impl CcpLinearSystem {
    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    /// Solves `A·θ = rhs` pair by pair with the closed-form 2×2 inverse.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let per_block = 2 * (self.n_sensors - 1);
        let mut out = vec![0.0; rhs.len()];
        for (j, block) in self.a_blocks.iter().enumerate() {
            let [[a, c], [_, d]] = *block;
            let det = a * d - c * c;
            let span = j * per_block..(j + 1) * per_block;
            for (o, r) in out[span.clone()].chunks_exact_mut(2).zip(rhs[span].chunks_exact(2)) {
                o[0] = (d * r[0] - c * r[1]) / det;
                o[1] = (a * r[1] - c * r[0]) / det;
            }
        }
        out
    }

    /// `A·θ`.
    pub fn apply(&self, theta: &[f64]) -> Vec<f64> {
        let per_block = 2 * (self.n_sensors - 1);
        let mut out = vec![0.0; theta.len()];
        for (j, block) in self.a_blocks.iter().enumerate() {
            let span = j * per_block..(j + 1) * per_block;
            for (o, t) in out[span.clone()].chunks_exact_mut(2).zip(theta[span].chunks_exact(2)) {
                o[0] = block[0][0] * t[0] + block[0][1] * t[1];
                o[1] = block[1][0] * t[0] + block[1][1] * t[1];
            }
        }
        out
    }

    /// The full d×d matrix, row-major.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let d = self.b.len();
        let per_block = 2 * (self.n_sensors - 1);
        let mut a = vec![vec![0.0; d]; d];
        for (j, block) in self.a_blocks.iter().enumerate() {
            for pair in 0..self.n_sensors - 1 {
                let at = j * per_block + 2 * pair;
                for r in 0..2 {
                    for c in 0..2 {
                        a[at + r][at + c] = block[r][c];
                    }
                }
            }
        }
        a
    }
}

/// Assembles `A` and `b` from first and second moments.
pub fn build_ccp_system(moments: &MomentSet) -> Result<CcpLinearSystem> {
    moments.check_nondegenerate()?;
    let n = moments.n_sensors();
    let a_blocks = (0..n)
        .map(|j| {
            let (m2, m1) = (moments.second(j, j), moments.mean[j]);
            [[2.0 * m2, 2.0 * m1], [2.0 * m1, 2.0]]
        })
        .collect();
    let mut b = Vec::with_capacity(BroadcastPolicy::dim(n));
    for j in 0..n {
        for i in (0..n).filter(|&i| i != j) {
            b.push(2.0 * moments.second(i, j));
            b.push(2.0 * moments.mean[i]);
        }
    }
    Ok(CcpLinearSystem {
        n_sensors: n,
        a_blocks,
        b,
    })
}

/// Spectral radius of `A⁻¹`, i.e. one over the smallest block eigenvalue.
pub fn ccp_step_size(system: &CcpLinearSystem) -> f64 {
    let smallest = system
        .a_blocks
        .iter()
        .map(|[[a, c], [_, d]]| {
            let half_trace = 0.5 * (a + d);
            let radius = (0.25 * (a - d) * (a - d) + c * c).sqrt();
            half_trace - radius
        })
        .fold(f64::INFINITY, f64::min);
    1.0 / smallest
}

/// Per-row scratch: `S_ℓ` for every ℓ and the residuals `r_iℓ` at `ℓ·n + i`.
struct Scratch {
    errors: Vec<f64>,
    residuals: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            errors: vec![0.0; n],
            residuals: vec![0.0; n * n],
        }
    }

    /// Fills `r_iℓ` and `S_ℓ = Σ_{i≠ℓ} r_iℓ²` for one observation.
    #[inline]
    fn fill(&mut self, theta: &[f64], x: &[f64]) {
        let n = x.len();
        for side in 0..n {
            let block = &theta[side * 2 * (n - 1)..(side + 1) * 2 * (n - 1)];
            let xs = x[side];
            let mut s = 0.0;
            let mut k = 0;
            for (i, xi) in x.iter().enumerate() {
                if i == side {
                    continue;
                }
                let r = xi - block[k] * xs - block[k + 1];
                self.residuals[side * n + i] = r;
                s += r * r;
                k += 2;
            }
            self.errors[side] = s;
        }
    }

    fn cost(&self) -> f64 {
        self.errors.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Linear-search index over `G_j = Σ_{ℓ≠j} S_ℓ` (last maximal index on ties).
    #[inline]
    fn subgradient_index(&self) -> usize {
        let errors = &self.errors;
        ccp::linear_search((0..errors.len()).map(|j| concave_term(errors, j)))
    }

    /// Adds `∇_θ G_j(θ; x)` into `out`: zero in block `j`, and
    /// `−2·[x_ℓ·r_iℓ, r_iℓ]` at pair `(i, ℓ)` for every `ℓ ≠ j`.
    #[inline]
    fn add_block_gradient(&self, x: &[f64], j: usize, out: &mut [f64]) {
        let n = x.len();
        for side in (0..n).filter(|&l| l != j) {
            let block = &mut out[side * 2 * (n - 1)..(side + 1) * 2 * (n - 1)];
            let xs = x[side];
            let mut k = 0;
            for i in (0..n).filter(|&i| i != side) {
                let r = self.residuals[side * n + i];
                block[k] += -2.0 * xs * r;
                block[k + 1] += -2.0 * r;
                k += 2;
            }
        }
    }
}

/// The per-row work of [`evaluate`] for a compile-time sensor count `N`:
/// adds `min_j S_j` to `acc[0]` and the row subgradient to `acc[1..]`.
/// Same arithmetic as the [`Scratch`] path, on stack arrays.
#[inline(always)]
fn row_kernel<const N: usize>(theta: &[f64], x: &[f64], acc: &mut [f64]) {
    let x: &[f64; N] = x.try_into().expect("row width");
    let width = 2 * N.saturating_sub(1);
    let mut residuals = [[0.0f64; N]; N];
    let mut errors = [0.0f64; N];
    for side in 0..N {
        let block = &theta[side * width..(side + 1) * width];
        let mut s = 0.0;
        let mut k = 0;
        for i in 0..N {
            if i == side {
                continue;
            }
            let r = x[i] - block[k] * x[side] - block[k + 1];
            residuals[side][i] = r;
            s += r * r;
            k += 2;
        }
        errors[side] = s;
    }
    acc[0] += errors.iter().copied().fold(f64::INFINITY, f64::min);
    let j = ccp::linear_search((0..N).map(|c| concave_term(&errors, c)));
    let out = &mut acc[1..];
    for side in 0..N {
        if side == j {
            continue;
        }
        let block = &mut out[side * width..(side + 1) * width];
        let mut k = 0;
        for i in 0..N {
            if i == side {
                continue;
            }
            let r = residuals[side][i];
            block[k] += -2.0 * x[side] * r;
            block[k + 1] += -2.0 * r;
            k += 2;
        }
    }
}

/// `G_j = Σ_{ℓ≠j} S_ℓ`.
#[inline]
fn concave_term(errors: &[f64], j: usize) -> f64 {
    let mut sum = 0.0;
    for (l, s) in errors.iter().enumerate() {
        sum += if l == j { 0.0 } else { *s };
    }
    sum
}

/// Cost of one observation under the optimal scheduler, `min_j S_j`.
pub fn sample_cost(policy: &BroadcastPolicy, x: &[f64]) -> f64 {
    let mut scratch = Scratch::new(x.len());
    scratch.fill(policy.theta(), x);
    scratch.cost()
}

fn check_policy(policy: &BroadcastPolicy, n: usize) -> Result<()> {
    check_dim(n, policy.n_sensors())
}

/// `J(θ) = E[min_j Σ_{i≠j} (Xᵢ − w_ij·X_j − b_ij)²]` over the backend.
pub fn broadcast_objective(policy: &BroadcastPolicy, backend: &ExpectationBackend) -> Result<f64> {
    let data = backend.samples();
    let n = data.n_sensors();
    check_policy(policy, n)?;
    Ok(evaluate(policy.theta(), backend).0)
}

/// The convex parts `(F, G)` with `J = F − G`.
pub fn broadcast_doc_parts(
    policy: &BroadcastPolicy,
    backend: &ExpectationBackend,
) -> Result<(f64, f64)> {
    let data = backend.samples();
    let n = data.n_sensors();
    check_policy(policy, n)?;
    let theta = policy.theta();
    let sums = sum_rows_with(
        data.as_flat(),
        n,
        2,
        || Scratch::new(n),
        |row, acc, scratch| {
            scratch.fill(theta, row);
            let errors = &scratch.errors;
            acc[0] += errors.iter().sum::<f64>();
            acc[1] += (0..n)
                .map(|j| concave_term(errors, j))
                .fold(f64::NEG_INFINITY, f64::max);
        },
    );
    let scale = 1.0 / data.n_samples() as f64;
    Ok((sums[0] * scale, sums[1] * scale))
}

/// Sensor whose transmission leaves the smallest total estimation error;
/// lowest index on ties.
pub fn broadcast_schedule(policy: &BroadcastPolicy, x: &[f64]) -> Result<usize> {
    let n = policy.n_sensors();
    check_dim(n, x.len())?;
    let mut scratch = Scratch::new(n);
    scratch.fill(policy.theta(), x);
    let errors = &scratch.errors;
    let mut best = 0;
    for (j, e) in errors.iter().enumerate() {
        if *e < errors[best] {
            best = j;
        }
    }
    Ok(best)
}

/// Subgradient of `max_j G_j(θ; x)` at `θ` for one observation.
pub fn broadcast_sample_subgradient(policy: &BroadcastPolicy, x: &[f64]) -> Result<Vec<f64>> {
    let n = policy.n_sensors();
    check_dim(n, x.len())?;
    let mut scratch = Scratch::new(n);
    scratch.fill(policy.theta(), x);
    let mut g = vec![0.0; policy.theta().len()];
    scratch.add_block_gradient(x, scratch.subgradient_index(), &mut g);
    Ok(g)
}

/// Backend mean of the per-sample subgradients.
pub fn broadcast_subgradient(policy: &BroadcastPolicy, backend: &ExpectationBackend) -> Result<Vec<f64>> {
    check_policy(policy, backend.n_sensors())?;
    Ok(evaluate(policy.theta(), backend).1)
}

/// Objective and subgradient at `theta` in one pass.
fn evaluate(theta: &[f64], backend: &ExpectationBackend) -> (f64, Vec<f64>) {
    match backend.n_sensors() {
        2 => evaluate_sized::<2>(theta, backend),
        3 => evaluate_sized::<3>(theta, backend),
        4 => evaluate_sized::<4>(theta, backend),
        5 => evaluate_sized::<5>(theta, backend),
        _ => evaluate_sized::<0>(theta, backend),
    }
}

/// [`evaluate`] with the sensor count fixed at compile time when `N > 0`.
fn evaluate_sized<const N: usize>(theta: &[f64], backend: &ExpectationBackend) -> (f64, Vec<f64>) {
    let data = backend.samples();
    let n = if N == 0 { data.n_sensors() } else { N };
    let d = theta.len();
    let sums = if N == 0 {
        sum_rows_with(
            data.as_flat(),
            n,
            d + 1,
            || Scratch::new(n),
            |row, acc, scratch| {
                scratch.fill(theta, row);
                acc[0] += scratch.cost();
                scratch.add_block_gradient(row, scratch.subgradient_index(), &mut acc[1..]);
            },
        )
    } else {
        sum_rows_sized::<N, _, _, _>(data.as_flat(), n, d + 1, || (), |row, acc, _| {
            row_kernel::<N>(theta, row, acc)
        })
    };
    let scale = 1.0 / data.n_samples() as f64;
    (sums[0] * scale, sums[1..].iter().map(|s| s * scale).collect())
}

/// One CCP step: `θ⁺ = A⁻¹(g + b)`.
pub fn broadcast_ccp_step(system: &CcpLinearSystem, g: &[f64]) -> Result<BroadcastPolicy> {
    check_dim(system.b.len(), g.len())?;
    BroadcastPolicy::new(system.n_sensors, step(system, g))
}

fn step(system: &CcpLinearSystem, g: &[f64]) -> Vec<f64> {
    let rhs: Vec<f64> = g.iter().zip(&system.b).map(|(g, b)| g + b).collect();
    system.solve(&rhs)
}

/// Runs the CCP recursion from `init`. The system matrix is built once from
/// the backend moments; its step size is recorded in the trace.
pub fn broadcast_ccp(
    init: &BroadcastPolicy,
    backend: &ExpectationBackend,
    opts: &CcpOptions,
) -> Result<(BroadcastPolicy, CcpTrace)> {
    opts.validate()?;
    check_policy(init, backend.n_sensors())?;
    let system = build_ccp_system(&backend.moments()?)?;
    run_with_system(init, backend, &system, opts)
}

fn run_with_system(
    init: &BroadcastPolicy,
    backend: &ExpectationBackend,
    system: &CcpLinearSystem,
    opts: &CcpOptions,
) -> Result<(BroadcastPolicy, CcpTrace)> {
    let mut trace = ccp::iterate(
        init.theta().to_vec(),
        opts,
        |theta| evaluate(theta, backend),
        |_, g| step(system, g),
    );
    trace.step_size = Some(ccp_step_size(system));
    let policy = BroadcastPolicy::new(init.n_sensors(), trace.final_iterate().to_vec())?;
    Ok((policy, trace))
}

/// Weights in `[−2, 2]`; biases in `mean ± 2σ` of the receiving sensor.
pub fn default_init_box(moments: &MomentSet) -> Result<InitBox> {
    let n = moments.n_sensors();
    let mut low = Vec::with_capacity(BroadcastPolicy::dim(n));
    let mut high = Vec::with_capacity(BroadcastPolicy::dim(n));
    for j in 0..n {
        for i in (0..n).filter(|&i| i != j) {
            let spread = 2.0 * moments.variance(i).max(0.0).sqrt();
            low.extend([-2.0, moments.mean[i] - spread]);
            high.extend([2.0, moments.mean[i] + spread]);
        }
    }
    InitBox::new(low, high)
}

/// CCP from `restarts` uniform draws in `init_box` (the default box when
/// `None`), keeping the terminal point with the smallest objective.
pub fn broadcast_multistart(
    backend: &ExpectationBackend,
    restarts: usize,
    init_box: Option<&InitBox>,
    seed: u64,
    opts: &CcpOptions,
) -> Result<Multistart<BroadcastPolicy>> {
    opts.validate()?;
    let n = backend.n_sensors();
    let moments = backend.moments()?;
    let system = build_ccp_system(&moments)?;
    let init_box = match init_box {
        Some(b) => b.clone(),
        None => default_init_box(&moments)?,
    };
    check_dim(BroadcastPolicy::dim(n), init_box.dim())?;
    let (best_restart, traces) = ccp::multistart(restarts, &init_box, seed, |start| {
        Ok(run_with_system(&BroadcastPolicy::new(n, start)?, backend, &system, opts)?.1)
    })?;
    let winner = &traces[best_restart];
    Ok(Multistart {
        best: BroadcastPolicy::new(n, winner.final_iterate().to_vec())?,
        best_value: winner.final_objective(),
        best_restart,
        traces,
    })
}
