//! End-to-end runs of the three worked examples on the reference bivariate
//! mixture, each checked against fixed tolerance bands.

use std::time::Instant;

use serde::Serialize;

use crate::broadcast::{broadcast_multistart, ccp_step_size, build_ccp_system};
use crate::ccp::{CcpOptions, Multistart};
use crate::error::Result;
use crate::learning::{self, decide, experiment_seed, LearningConfig, Mode, Policy, ValidationPlan};
use crate::model::{BroadcastPolicy, GaussianMixtureSpec, RiskReport, UnicastPolicy};
use crate::reduce::derive_seed;
use crate::sampler::{analytic_moments, sample_mixture, ExpectationBackend};
use crate::unicast::{blind_baseline, unicast_multistart, BlindBaseline};

/// Reference optimum of the unicast example.
pub const UNICAST_XHAT: [f64; 2] = [0.0045, 1.5900];
pub const UNICAST_J: f64 = 0.8065;
/// Reference optimum of the broadcast example, `(w21, b21, w12, b12)`.
pub const BROADCAST_THETA: [f64; 4] = [0.4238, 0.2151, -0.2390, 0.0624];
pub const BROADCAST_J: f64 = 0.5276;
pub const BLIND_J: f64 = 1.75;
pub const UNICAST_OVER_BLIND: f64 = 0.54;
pub const BROADCAST_OVER_UNICAST: f64 = 0.346;

const OBJECTIVE_BAND: f64 = 0.02;
const PARAMETER_BAND: f64 = 0.05;
const IMPROVEMENT_BAND: f64 = 0.02;

const DATA_STREAM: u64 = 1;
const RESTART_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const TEST_STREAM: u64 = 4;
const REPEAT_STREAM: u64 = 5;
const POPULATION_STREAM: u64 = 6;

/// One pass/fail line.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub low: f64,
    pub high: f64,
    pub passed: bool,
}

impl Check {
    pub fn within(name: impl Into<String>, observed: f64, target: f64, band: f64) -> Self {
        Self::range(name, observed, target - band, target + band)
    }

    pub fn range(name: impl Into<String>, observed: f64, low: f64, high: f64) -> Self {
        Self {
            name: name.into(),
            observed,
            low,
            high,
            passed: observed >= low && observed <= high,
        }
    }

    pub fn below(name: impl Into<String>, observed: f64, high: f64) -> Self {
        let mut c = Self::range(name, observed, f64::NEG_INFINITY, high);
        c.passed = observed < high;
        c
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        format!(
            "[{verdict}] {:<44} observed {:>12.6}  band [{}, {}]",
            self.name,
            self.observed,
            fmt_bound(self.low),
            fmt_bound(self.high)
        )
    }
}

fn fmt_bound(v: f64) -> String {
    if v.is_infinite() {
        if v < 0.0 { "-inf".into() } else { "inf".into() }
    } else {
        format!("{v:.6}")
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Settings for the two model-based examples.
#[derive(Debug, Clone, Serialize)]
pub struct MixtureSettings {
    pub samples: usize,
    pub restarts: usize,
    pub seed: u64,
    pub ccp: CcpOptions,
}

impl Default for MixtureSettings {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            restarts: 200,
            seed: 1,
            ccp: CcpOptions::default(),
        }
    }
}

impl MixtureSettings {
    pub fn backend(&self) -> Result<ExpectationBackend> {
        ExpectationBackend::monte_carlo(
            GaussianMixtureSpec::reference_bivariate(),
            self.samples,
            derive_seed(self.seed, DATA_STREAM, 0),
        )
    }

    fn restart_seed(&self) -> u64 {
        derive_seed(self.seed, RESTART_STREAM, 0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UnicastOutcome {
    pub xhat: Vec<f64>,
    pub objective: f64,
    pub blind: BlindBaseline,
    pub improvement_over_blind: f64,
    pub terminal_objectives: Vec<f64>,
    pub terminal_points: Vec<Vec<f64>>,
    pub converged_runs: usize,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

pub fn unicast_on(backend: &ExpectationBackend, settings: &MixtureSettings) -> Result<Multistart<UnicastPolicy>> {
    unicast_multistart(backend, settings.restarts, None, settings.restart_seed(), &settings.ccp)
}

pub fn broadcast_on(
    backend: &ExpectationBackend,
    settings: &MixtureSettings,
) -> Result<Multistart<BroadcastPolicy>> {
    broadcast_multistart(backend, settings.restarts, None, settings.restart_seed(), &settings.ccp)
}

pub fn unicast_mixture(settings: &MixtureSettings) -> Result<UnicastOutcome> {
    let started = Instant::now();
    let backend = settings.backend()?;
    let best = unicast_on(&backend, settings)?;
    Ok(summarize_unicast(best, started.elapsed().as_secs_f64()))
}

fn summarize_unicast(best: Multistart<UnicastPolicy>, seconds: f64) -> UnicastOutcome {
    let blind = blind_baseline(&analytic_moments(&GaussianMixtureSpec::reference_bivariate()));
    let improvement = 1.0 - best.best_value / blind.objective;
    let checks = vec![
        Check::within("unicast J", best.best_value, UNICAST_J, OBJECTIVE_BAND),
        Check::within("unicast xhat_1", best.best.xhat[0], UNICAST_XHAT[0], PARAMETER_BAND),
        Check::within("unicast xhat_2", best.best.xhat[1], UNICAST_XHAT[1], PARAMETER_BAND),
        Check::within("blind J (analytic)", blind.objective, BLIND_J, 0.0),
        Check::within("unicast improvement over blind", improvement, UNICAST_OVER_BLIND, IMPROVEMENT_BAND),
    ];
    UnicastOutcome {
        xhat: best.best.xhat.clone(),
        objective: best.best_value,
        improvement_over_blind: improvement,
        terminal_objectives: best.traces.iter().map(|t| t.final_objective()).collect(),
        terminal_points: best.traces.iter().map(|t| t.final_iterate().to_vec()).collect(),
        converged_runs: best.traces.iter().filter(|t| t.converged).count(),
        blind,
        checks,
        seconds,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BroadcastOutcome {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub unicast_objective: f64,
    pub improvement_over_unicast: f64,
    pub step_size: f64,
    pub terminal_objectives: Vec<f64>,
    pub converged_runs: usize,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

/// Runs the broadcast example; the unicast optimum on the same backend is
/// needed for the improvement figure and is computed unless supplied.
pub fn broadcast_mixture(settings: &MixtureSettings, unicast_j: Option<f64>) -> Result<BroadcastOutcome> {
    let started = Instant::now();
    let backend = settings.backend()?;
    let best = broadcast_on(&backend, settings)?;
    let unicast_j = match unicast_j {
        Some(j) => j,
        None => unicast_on(&backend, settings)?.best_value,
    };
    let improvement = 1.0 - best.best_value / unicast_j;
    let theta = best.best.theta().to_vec();
    let mut checks = vec![Check::within("broadcast J", best.best_value, BROADCAST_J, OBJECTIVE_BAND)];
    for (k, name) in ["w21", "b21", "w12", "b12"].iter().enumerate() {
        checks.push(Check::within(
            format!("broadcast {name}"),
            theta[k],
            BROADCAST_THETA[k],
            PARAMETER_BAND,
        ));
    }
    checks.push(Check::within(
        "broadcast improvement over unicast",
        improvement,
        BROADCAST_OVER_UNICAST,
        IMPROVEMENT_BAND,
    ));
    Ok(BroadcastOutcome {
        step_size: ccp_step_size(&build_ccp_system(&backend.moments()?)?),
        objective: best.best_value,
        unicast_objective: unicast_j,
        improvement_over_unicast: improvement,
        terminal_objectives: best.traces.iter().map(|t| t.final_objective()).collect(),
        converged_runs: best.traces.iter().filter(|t| t.converged).count(),
        theta,
        checks,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DataDrivenSettings {
    pub train_size: usize,
    pub test_size: usize,
    pub experiments: usize,
    pub population_samples: usize,
    pub restarts: usize,
    pub success_gap: f64,
    pub epsilons: Vec<f64>,
    pub seed: u64,
    pub ccp: CcpOptions,
}

impl Default for DataDrivenSettings {
    fn default() -> Self {
        Self {
            train_size: 10_000,
            test_size: 100_000,
            experiments: 1000,
            population_samples: 1_000_000,
            restarts: 200,
            success_gap: 0.02,
            epsilons: vec![0.001, 0.002, 0.005, 0.01, 0.05],
            seed: 1,
            ccp: CcpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DataDrivenOutcome {
    pub theta: Vec<f64>,
    pub j_train: f64,
    pub j_test: f64,
    pub relative_gap: f64,
    pub success: bool,
    pub population_estimate: f64,
    pub repeated: RiskReport,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

pub fn data_driven(settings: &DataDrivenSettings) -> Result<DataDrivenOutcome> {
    let started = Instant::now();
    let spec = GaussianMixtureSpec::reference_bivariate();
    let seed = |stream| derive_seed(settings.seed, stream, 0);

    let train_data = sample_mixture(&spec, settings.train_size, seed(TRAIN_STREAM))?;
    let config = LearningConfig {
        mode: Mode::Broadcast,
        restarts: settings.restarts,
        ccp_options: settings.ccp,
        success_gap: settings.success_gap,
        seed: seed(RESTART_STREAM),
    };
    let trained = learning::train(&train_data, &config)?;

    let test_data = sample_mixture(&spec, settings.test_size, seed(TEST_STREAM))?;
    let j_test = learning::validate(&trained.policy, &test_data)?;
    let decision = decide(trained.j_train, j_test, settings.success_gap);
    let relative_gap = decision.relative_gap().unwrap_or(f64::INFINITY);

    let plan = ValidationPlan {
        test_size: settings.test_size,
        experiments: settings.experiments,
        epsilons: settings.epsilons.clone(),
        success_gap: settings.success_gap,
        seed: seed(REPEAT_STREAM),
    };
    let repeated = learning::repeated_validation(&trained.policy, trained.j_train, &spec, &plan)?;

    let population = sample_mixture(&spec, settings.population_samples, experiment_seed(seed(POPULATION_STREAM), 0))?;
    let population_estimate = learning::validate(&trained.policy, &population)?;
    let mean_gap = (repeated.mean_j_test - population_estimate).abs() / population_estimate;

    let checks = vec![
        Check::range("data-driven J_train", trained.j_train, 0.50, 0.56),
        Check::below("data-driven relative gap |J_test-J_train|/J_train", relative_gap, 0.02),
        Check::range(
            "data-driven decide(threshold 0.02) = success",
            f64::from(u8::from(decision.is_success())),
            1.0,
            1.0,
        ),
        Check::below("repeated mean J_test vs population (relative)", mean_gap, 0.01),
    ];
    let theta = match &trained.policy {
        Policy::Broadcast(p) => p.theta().to_vec(),
        Policy::Unicast(p) => p.xhat.clone(),
    };
    Ok(DataDrivenOutcome {
        theta,
        j_train: trained.j_train,
        j_test,
        relative_gap,
        success: decision.is_success(),
        population_estimate,
        repeated,
        checks,
        seconds: started.elapsed().as_secs_f64(),
    })
}
