//! Convex-concave procedure driver shared by the unicast and broadcast solvers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CcpTrace;
use crate::reduce::derive_seed;

const RESTART_DOMAIN: u64 = 0x7265_7374_6172_7473;

/// Stopping rules for a CCP run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcpOptions {
    pub max_iterations: usize,
    /// Stop once `‖θ⁽ᵏ⁺¹⁾ − θ⁽ᵏ⁾‖₂` falls to this value.
    pub step_tolerance: f64,
    /// Stop once `|J⁽ᵏ⁺¹⁾ − J⁽ᵏ⁾|` falls to this value.
    pub objective_tolerance: f64,
}

impl Default for CcpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_tolerance: 1e-8,
            objective_tolerance: 1e-10,
        }
    }
}

impl CcpOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidOptions("max_iterations must be at least 1".into()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.step_tolerance) || !positive(self.objective_tolerance) {
            return Err(Error::InvalidOptions("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Index of the largest value, scanning in order and accepting ties, so the
/// last maximal index wins.
#[inline]
pub fn linear_search(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut best_index = 0;
    for (j, v) in values.into_iter().enumerate() {
        let take = v >= best;
        best = if take { v } else { best };
        best_index = if take { j } else { best_index };
    }
    best_index
}

/// Runs the CCP recursion from `init`.
///
/// `evaluate` returns the objective and a subgradient of the concave part at a
/// point; `step` maps `(point, subgradient)` to the next point.
pub(crate) fn iterate<E, S>(init: Vec<f64>, opts: &CcpOptions, evaluate: E, step: S) -> CcpTrace
where
    E: Fn(&[f64]) -> (f64, Vec<f64>),
    S: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    let (mut value, mut grad) = evaluate(&init);
    let mut trace = CcpTrace {
        iterates: vec![init],
        objective_values: vec![value],
        converged: false,
        iterations: 0,
        final_step_norm: f64::INFINITY,
        step_size: None,
    };
    while trace.iterations < opts.max_iterations {
        let current = trace.final_iterate();
        let next = step(current, &grad);
        let step_norm = next
            .iter()
            .zip(current)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let (next_value, next_grad) = evaluate(&next);
        let decrease = value - next_value;

        trace.iterates.push(next);
        trace.objective_values.push(next_value);
        trace.iterations += 1;
        trace.final_step_norm = step_norm;
        value = next_value;
        grad = next_grad;

        if step_norm <= opts.step_tolerance || decrease.abs() <= opts.objective_tolerance {
            trace.converged = true;
            break;
        }
    }
    trace
}

/// Axis-aligned box for random initial points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl InitBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        crate::model::check_dim(low.len(), high.len())?;
        if low.iter().zip(&high).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidOptions("init box needs low < high in every coordinate".into()));
        }
        Ok(Self { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    /// Uniform draw for restart `index`, from its own derived stream.
    pub fn draw(&self, seed: u64, index: usize) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, RESTART_DOMAIN, index as u64));
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| rng.random_range(*l..*h))
            .collect()
    }

    pub fn shifted(&self, shift: &[f64]) -> Self {
        let add = |v: &[f64]| v.iter().zip(shift).map(|(a, c)| a + c).collect();
        Self {
            low: add(&self.low),
            high: add(&self.high),
        }
    }
}

/// Result of a multistart search.
#[derive(Debug, Clone)]
pub struct Multistart<P> {
    pub best: P,
    pub best_value: f64,
    pub best_restart: usize,
    pub traces: Vec<CcpTrace>,
}

/// Runs `run` from `restarts` box draws and keeps the lowest terminal
/// objective; ties go to the lowest restart index.
pub(crate) fn multistart<F>(
    restarts: usize,
    init_box: &InitBox,
    seed: u64,
    run: F,
) -> Result<(usize, Vec<CcpTrace>)>
where
    F: Fn(Vec<f64>) -> Result<CcpTrace> + Sync,
{
    if restarts == 0 {
        return Err(Error::InvalidOptions("restarts must be at least 1".into()));
    }
    let traces = (0..restarts)
        .into_par_iter()
        .map(|r| run(init_box.draw(seed, r)))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (r, t) in traces.iter().enumerate() {
        if t.final_objective() < traces[best].final_objective() {
            best = r;
        }
    }
    Ok((best, traces))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_search_prefers_last_tie() {
        assert_eq!(linear_search([1.0, 3.0, 2.0]), 1);
        assert_eq!(linear_search([4.0, 4.0]), 1);
        assert_eq!(linear_search([0.0, 0.0, 0.0]), 2);
    }

    #[test]
    fn options_validation() {
        assert!(CcpOptions::default().validate().is_ok());
        let bad = CcpOptions {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CcpOptions {
            step_tolerance: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn box_draws_are_reproducible_and_inside() {
        let b = InitBox::new(vec![-1.0, 2.0], vec![1.0, 3.0]).unwrap();
        for r in 0..50 {
            let p = b.draw(4, r);
            assert_eq!(p, b.draw(4, r));
            assert!((-1.0..1.0).contains(&p[0]) && (2.0..3.0).contains(&p[1]));
        }
        assert_ne!(b.draw(4, 0), b.draw(4, 1));
        assert!(InitBox::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn iterate_stops_on_fixed_point() {
        // Contraction towards 1.0 with a zero "subgradient".
        let trace = iterate(
            vec![5.0],
            &CcpOptions::default(),
            |x| ((x[0] - 1.0).powi(2), vec![0.0]),
            |x, _| vec![1.0 + 0.5 * (x[0] - 1.0)],
        );
        assert!(trace.converged);
        assert!(trace.iterations < 100);
        assert_eq!(trace.iterates.len(), trace.iterations + 1);
        assert_eq!(trace.objective_values.len(), trace.iterations + 1);
    }

    #[test]
    fn iterate_reports_exhaustion() {
        let opts = CcpOptions {
            max_iterations: 3,
            ..Default::default()
        };
        let trace = iterate(vec![0.0], &opts, |x| (-x[0], vec![0.0]), |x, _| vec![x[0] + 1.0]);
        assert!(!trace.converged);
        assert_eq!(trace.iterations, 3);
        assert_eq!(trace.final_iterate(), &[3.0]);
    }
}
