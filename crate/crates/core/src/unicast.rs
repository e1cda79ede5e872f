//! Unicast networks: only the scheduled estimator receives the packet, every
//! other estimator sees an erasure and falls back to its fixed estimate `x̂ᵢ`.
//!
//! With the optimal scheduler the per-sample cost is
//! `min_j Σ_{i≠j} (xᵢ − x̂ᵢ)²`, which splits as
//! `Σᵢ (xᵢ − x̂ᵢ)² − max_j (x_j − x̂_j)²`. The first term is a convex
//! quadratic, so each CCP step has the closed form `x̂⁺ = ½·g + E[X]`.

use serde::{Deserialize, Serialize};

use crate::ccp::{self, CcpOptions, InitBox, Multistart};
use crate::error::Result;
use crate::model::{check_dim, CcpTrace, MomentSet, UnicastPolicy};
use crate::reduce::{sum_rows, sum_rows_sized};
use crate::sampler::ExpectationBackend;

/// Cost of one observation under the optimal scheduler,
/// `min_j Σ_{i≠j} (xᵢ − x̂ᵢ)²`.
pub fn sample_cost(xhat: &[f64], x: &[f64]) -> f64 {
    cost_without(xhat, x, subgradient_index(xhat, x))
}

/// `Σ_{i≠skip} (xᵢ − x̂ᵢ)²`.
#[inline]
fn cost_without(xhat: &[f64], x: &[f64], skip: usize) -> f64 {
    let mut sum = 0.0;
    for (i, (xi, hi)) in x.iter().zip(xhat).enumerate() {
        let e = xi - hi;
        sum += if i == skip { 0.0 } else { e * e };
    }
    sum
}

/// `J(x̂) = E[min_j Σ_{i≠j} (Xᵢ − x̂ᵢ)²]` over the backend samples.
pub fn unicast_objective(policy: &UnicastPolicy, backend: &ExpectationBackend) -> Result<f64> {
    let data = backend.samples();
    check_dim(data.n_sensors(), policy.n_sensors())?;
    Ok(evaluate(&policy.xhat, backend).0)
}

/// The convex parts `(F, G)` with `J = F − G`:
/// `F = E[Σᵢ (Xᵢ − x̂ᵢ)²]`, `G = E[max_j (X_j − x̂_j)²]`.
pub fn unicast_doc_parts(policy: &UnicastPolicy, backend: &ExpectationBackend) -> Result<(f64, f64)> {
    let data = backend.samples();
    check_dim(data.n_sensors(), policy.n_sensors())?;
    let xhat = &policy.xhat;
    let sums = sum_rows(data.as_flat(), data.n_sensors(), 2, |row, acc| {
        let mut total = 0.0;
        let mut largest = f64::NEG_INFINITY;
        for (x, h) in row.iter().zip(xhat) {
            let sq = (x - h) * (x - h);
            total += sq;
            largest = largest.max(sq);
        }
        acc[0] += total;
        acc[1] += largest;
    });
    let scale = 1.0 / data.n_samples() as f64;
    Ok((sums[0] * scale, sums[1] * scale))
}

/// Sensor granted channel access for observation `x`: the one with the
/// largest `|x_j − x̂_j|`, lowest index on ties.
pub fn unicast_schedule(policy: &UnicastPolicy, x: &[f64]) -> Result<usize> {
    check_dim(policy.n_sensors(), x.len())?;
    let mut best = 0;
    let mut best_dev = f64::NEG_INFINITY;
    for (j, (xj, hj)) in x.iter().zip(&policy.xhat).enumerate() {
        let dev = (xj - hj).abs();
        if dev > best_dev {
            best_dev = dev;
            best = j;
        }
    }
    Ok(best)
}

/// Index chosen by the subgradient linear search (last maximal index).
#[inline]
fn subgradient_index(xhat: &[f64], x: &[f64]) -> usize {
    ccp::linear_search(x.iter().zip(xhat).map(|(xj, hj)| (xj - hj) * (xj - hj)))
}

/// Subgradient of `max_j (x_j − x̂_j)²` at `x̂` for one observation:
/// `−2(x_j* − x̂_j*)·e_j*` with `j*` from the linear search.
pub fn unicast_sample_subgradient(policy: &UnicastPolicy, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(policy.n_sensors(), x.len())?;
    let j = subgradient_index(&policy.xhat, x);
    let mut g = vec![0.0; x.len()];
    g[j] = -2.0 * (x[j] - policy.xhat[j]);
    Ok(g)
}

/// Backend mean of the per-sample subgradients, a subgradient of `G`.
pub fn unicast_subgradient(policy: &UnicastPolicy, backend: &ExpectationBackend) -> Result<Vec<f64>> {
    let data = backend.samples();
    check_dim(data.n_sensors(), policy.n_sensors())?;
    Ok(evaluate(&policy.xhat, backend).1)
}

/// Objective and subgradient at `xhat` in one pass over the samples.
fn evaluate(xhat: &[f64], backend: &ExpectationBackend) -> (f64, Vec<f64>) {
    match backend.n_sensors() {
        2 => evaluate_sized::<2>(xhat, backend),
        3 => evaluate_sized::<3>(xhat, backend),
        4 => evaluate_sized::<4>(xhat, backend),
        5 => evaluate_sized::<5>(xhat, backend),
        _ => evaluate_sized::<0>(xhat, backend),
    }
}

/// [`evaluate`] with the sensor count fixed at compile time when `N > 0`.
fn evaluate_sized<const N: usize>(xhat: &[f64], backend: &ExpectationBackend) -> (f64, Vec<f64>) {
    let data = backend.samples();
    let n = if N == 0 { data.n_sensors() } else { N };
    let sums = sum_rows_sized::<N, _, _, _>(data.as_flat(), n, n + 1, || (), |row, acc, _| {
        let xhat = if N == 0 { xhat } else { &xhat[..N] };
        let j = subgradient_index(xhat, row);
        acc[0] += cost_without(xhat, row, j);
        acc[1 + j] += -2.0 * (row[j] - xhat[j]);
    });
    let scale = 1.0 / data.n_samples() as f64;
    (sums[0] * scale, sums[1..].iter().map(|s| s * scale).collect())
}

/// One CCP step: `x̂⁺ = ½·g + E[X]`.
pub fn unicast_ccp_step(policy: &UnicastPolicy, mean: &[f64], g: &[f64]) -> Result<UnicastPolicy> {
    check_dim(policy.n_sensors(), mean.len())?;
    check_dim(policy.n_sensors(), g.len())?;
    Ok(UnicastPolicy {
        xhat: step(mean, g),
    })
}

fn step(mean: &[f64], g: &[f64]) -> Vec<f64> {
    g.iter().zip(mean).map(|(g, m)| 0.5 * g + m).collect()
}

/// Runs the CCP recursion from `init` until a stopping rule fires.
///
/// Running out of iterations is reported through `trace.converged`.
pub fn unicast_ccp(
    init: &UnicastPolicy,
    backend: &ExpectationBackend,
    opts: &CcpOptions,
) -> Result<(UnicastPolicy, CcpTrace)> {
    opts.validate()?;
    check_dim(backend.n_sensors(), init.n_sensors())?;
    let mean = backend.samples().column_means();
    let trace = ccp::iterate(
        init.xhat.clone(),
        opts,
        |x| evaluate(x, backend),
        |_, g| step(&mean, g),
    );
    let policy = UnicastPolicy::new(trace.final_iterate().to_vec())?;
    Ok((policy, trace))
}

/// `[mean − 3σ, mean + 3σ]` per sensor.
pub fn default_init_box(moments: &MomentSet) -> Result<InitBox> {
    let (low, high) = (0..moments.n_sensors())
        .map(|i| {
            let spread = 3.0 * moments.variance(i).max(0.0).sqrt();
            (moments.mean[i] - spread, moments.mean[i] + spread)
        })
        .unzip();
    InitBox::new(low, high)
}

/// CCP from `restarts` uniform draws in `init_box` (the default box when
/// `None`), keeping the terminal point with the smallest objective.
pub fn unicast_multistart(
    backend: &ExpectationBackend,
    restarts: usize,
    init_box: Option<&InitBox>,
    seed: u64,
    opts: &CcpOptions,
) -> Result<Multistart<UnicastPolicy>> {
    opts.validate()?;
    let init_box = match init_box {
        Some(b) => b.clone(),
        None => default_init_box(&backend.moments()?)?,
    };
    check_dim(backend.n_sensors(), init_box.dim())?;
    let (best_restart, traces) = ccp::multistart(restarts, &init_box, seed, |start| {
        Ok(unicast_ccp(&UnicastPolicy::new(start)?, backend, opts)?.1)
    })?;
    let winner = &traces[best_restart];
    Ok(Multistart {
        best: UnicastPolicy::new(winner.final_iterate().to_vec())?,
        best_value: winner.final_objective(),
        best_restart,
        traces,
    })
}

/// Schedule-by-variance baseline that ignores the observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindBaseline {
    pub schedule_index: usize,
    pub estimates: Vec<f64>,
    pub objective: f64,
}

/// Always transmit the sensor with the largest variance and estimate the
/// others by their means.
pub fn blind_baseline(moments: &MomentSet) -> BlindBaseline {
    let variances: Vec<f64> = (0..moments.n_sensors()).map(|i| moments.variance(i)).collect();
    let mut schedule_index = 0;
    for (i, v) in variances.iter().enumerate() {
        if *v > variances[schedule_index] {
            schedule_index = i;
        }
    }
    let objective = variances
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != schedule_index)
        .map(|(_, v)| v)
        .sum();
    BlindBaseline {
        schedule_index,
        estimates: moments.mean.clone(),
        objective,
    }
}
