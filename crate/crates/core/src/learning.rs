//! Data-driven design: fit a policy on a training set by minimizing its
//! empirical risk, then judge it on independent test sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::broadcast::{broadcast_multistart, broadcast_objective};
use crate::ccp::CcpOptions;
use crate::error::{Error, Result};
use crate::model::{check_dim, BroadcastPolicy, GaussianMixtureSpec, RiskReport, SampleMatrix, UnicastPolicy};
use crate::reduce::derive_seed;
use crate::sampler::{sample_mixture, ExpectationBackend};
use crate::unicast::{unicast_multistart, unicast_objective};

const EXPERIMENT_DOMAIN: u64 = 0x7465_7374_7365_7473;

/// Below this training risk a relative gap is meaningless.
pub const ZERO_RISK_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unicast,
    Broadcast,
}

/// A trained policy of either network type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Policy {
    Unicast(UnicastPolicy),
    Broadcast(BroadcastPolicy),
}

impl Policy {
    pub fn mode(&self) -> Mode {
        match self {
            Self::Unicast(_) => Mode::Unicast,
            Self::Broadcast(_) => Mode::Broadcast,
        }
    }

    pub fn n_sensors(&self) -> usize {
        match self {
            Self::Unicast(p) => p.n_sensors(),
            Self::Broadcast(p) => p.n_sensors(),
        }
    }

    /// The mode's objective over the backend samples.
    pub fn objective(&self, backend: &ExpectationBackend) -> Result<f64> {
        match self {
            Self::Unicast(p) => unicast_objective(p, backend),
            Self::Broadcast(p) => broadcast_objective(p, backend),
        }
    }

    /// Index of the sensor scheduled for one observation.
    pub fn schedule(&self, x: &[f64]) -> Result<usize> {
        match self {
            Self::Unicast(p) => crate::unicast::unicast_schedule(p, x),
            Self::Broadcast(p) => crate::broadcast::broadcast_schedule(p, x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    pub mode: Mode,
    pub restarts: usize,
    pub ccp_options: CcpOptions,
    /// Largest accepted `|J_test − J_train| / J_train`.
    pub success_gap: f64,
    pub seed: u64,
}

impl LearningConfig {
    pub fn new(mode: Mode, restarts: usize, seed: u64) -> Self {
        Self {
            mode,
            restarts,
            ccp_options: CcpOptions::default(),
            success_gap: 0.01,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidOptions("restarts must be at least 1".into()));
        }
        if !(self.success_gap > 0.0 && self.success_gap < 1.0) {
            return Err(Error::InvalidOptions("success_gap must lie in (0, 1)".into()));
        }
        self.ccp_options.validate()
    }
}

/// Outcome of training.
#[derive(Debug, Clone)]
pub struct Trained {
    pub policy: Policy,
    pub j_train: f64,
    pub multistart_values: Vec<f64>,
    pub traces: Vec<crate::model::CcpTrace>,
    pub best_restart: usize,
}

/// Multistart CCP on the empirical measure of `train_data`.
pub fn train(train_data: &SampleMatrix, config: &LearningConfig) -> Result<Trained> {
    config.validate()?;
    let backend = ExpectationBackend::empirical(train_data.clone());
    backend.moments()?;
    let opts = &config.ccp_options;
    let (policy, j_train, best_restart, traces) = match config.mode {
        Mode::Unicast => {
            let r = unicast_multistart(&backend, config.restarts, None, config.seed, opts)?;
            (Policy::Unicast(r.best), r.best_value, r.best_restart, r.traces)
        }
        Mode::Broadcast => {
            let r = broadcast_multistart(&backend, config.restarts, None, config.seed, opts)?;
            (Policy::Broadcast(r.best), r.best_value, r.best_restart, r.traces)
        }
    };
    Ok(Trained {
        policy,
        j_train,
        multistart_values: traces.iter().map(|t| t.final_objective()).collect(),
        traces,
        best_restart,
    })
}

/// Empirical risk of a fixed policy on a test set.
pub fn validate(policy: &Policy, test_data: &SampleMatrix) -> Result<f64> {
    check_dim(policy.n_sensors(), test_data.n_sensors())?;
    policy.objective(&ExpectationBackend::empirical(test_data.clone()))
}

/// Success or failure of an out-of-sample check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Decision {
    Success { relative_gap: f64 },
    Failure { relative_gap: f64 },
    /// The training risk is zero, so only an absolute test is possible:
    /// success iff the test risk is at most [`ZERO_RISK_FLOOR`].
    ZeroTrainRisk { success: bool },
}

impl Decision {
    pub fn is_success(&self) -> bool {
        matches!(self, Self::Success { .. } | Self::ZeroTrainRisk { success: true })
    }

    pub fn relative_gap(&self) -> Option<f64> {
        match self {
            Self::Success { relative_gap } | Self::Failure { relative_gap } => Some(*relative_gap),
            Self::ZeroTrainRisk { .. } => None,
        }
    }
}

/// Declares success when `|j_test − j_train| / j_train ≤ success_gap`.
pub fn decide(j_train: f64, j_test: f64, success_gap: f64) -> Decision {
    if j_train <= 0.0 {
        return Decision::ZeroTrainRisk {
            success: j_test <= ZERO_RISK_FLOOR,
        };
    }
    let relative_gap = (j_test - j_train).abs() / j_train;
    if relative_gap <= success_gap {
        Decision::Success { relative_gap }
    } else {
        Decision::Failure { relative_gap }
    }
}

/// Settings for [`repeated_validation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPlan {
    pub test_size: usize,
    pub experiments: usize,
    pub epsilons: Vec<f64>,
    pub success_gap: f64,
    pub seed: u64,
}

/// Seed of test set `index` under a plan seed.
pub fn experiment_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, EXPERIMENT_DOMAIN, index as u64)
}

/// Evaluates `policy` on `experiments` fresh test sets drawn from `spec` and
/// summarizes how far the test risks fall from `j_train`.
pub fn repeated_validation(
    policy: &Policy,
    j_train: f64,
    spec: &GaussianMixtureSpec,
    plan: &ValidationPlan,
) -> Result<RiskReport> {
    check_dim(policy.n_sensors(), spec.n_sensors())?;
    if plan.test_size == 0 || plan.experiments == 0 {
        return Err(Error::InvalidOptions("test_size and experiments must be positive".into()));
    }
    if plan.epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidOptions("epsilons must be positive".into()));
    }
    let j_test_values = (0..plan.experiments)
        .into_par_iter()
        .map(|k| {
            let data = sample_mixture(spec, plan.test_size, experiment_seed(plan.seed, k))?;
            validate(policy, &data)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_j_test = j_test_values.iter().sum::<f64>() / j_test_values.len() as f64;
    let decision = decide(j_train, mean_j_test, plan.success_gap);
    Ok(RiskReport {
        j_train,
        exceedance: exceedance(&j_test_values, j_train, &plan.epsilons),
        mean_j_test,
        success: decision.is_success(),
        relative_gap: decision.relative_gap().unwrap_or(0.0),
        j_test_values,
    })
}

/// Fraction of values with `|v − reference| > ε` for each ε, sorted by ε.
pub fn exceedance(values: &[f64], reference: f64, epsilons: &[f64]) -> Vec<(f64, f64)> {
    let mut eps = epsilons.to_vec();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    eps.into_iter()
        .map(|e| {
            let hits = values.iter().filter(|v| (*v - reference).abs() > e).count();
            (e, hits as f64 / values.len() as f64)
        })
        .collect()
}
