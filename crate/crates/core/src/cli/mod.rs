//! Command-line front end.
//!
//! Exit codes: 0 ok, 1 acceptance failure, 2 configuration error, 3 I/O
//! error, 4 degenerate data, 5 dimension mismatch.

pub mod formats;
pub mod reproduce;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::ccp::CcpOptions;
use crate::error::Error;
use crate::learning::{self, LearningConfig, Mode, Policy, ValidationPlan};
use crate::sampler::{analytic_moments, empirical_moments, sample_mixture, ExpectationBackend};
use crate::unicast::blind_baseline;
use formats::{PolicyFile, RunManifest};

/// Environment variable read for the worker count when `--threads` is absent.
pub const THREADS_ENV: &str = "DCSCHED_THREADS";

pub const DEFAULT_RESTARTS: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("acceptance check failed")]
    Acceptance,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Acceptance => 1,
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::Degenerate(_) => 4,
            Self::Dimension(_) => 5,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::DegenerateVariance { .. } => Self::Degenerate(e.to_string()),
            Error::DimensionMismatch { .. } => Self::Dimension(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dcsched", version, about = "Sensor scheduling and remote estimation by convex-concave programming")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Random seed.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Multistart restarts.
    #[arg(long, global = true, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
    /// CCP iteration cap.
    #[arg(long = "max-iter", global = true, default_value_t = 500)]
    pub max_iter: usize,
    /// CCP step-norm tolerance.
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub tol: f64,
    /// Worker threads (default: the DCSCHED_THREADS variable, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output path (a directory for `reproduce`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Common {
    fn ccp_options(&self) -> Result<CcpOptions, CliError> {
        let opts = CcpOptions {
            max_iterations: self.max_iter,
            step_tolerance: self.tol,
            ..CcpOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Unicast,
    Broadcast,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Unicast => Mode::Unicast,
            ModeArg::Broadcast => Mode::Broadcast,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Example {
    UnicastMixture,
    BroadcastMixture,
    DataDriven,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from a Gaussian mixture config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        count: usize,
    },
    /// Fit a policy to a dataset by multistart CCP.
    Train {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        data: PathBuf,
    },
    /// Objective and scheduling frequencies of a policy on a dataset.
    Evaluate {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Repeated out-of-sample validation against fresh mixture draws.
    Validate {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long = "test-size")]
        test_size: usize,
        #[arg(long)]
        experiments: usize,
        /// Training risk; defaults to `j_train` from a training report.
        #[arg(long = "j-train")]
        j_train: Option<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.002,0.005,0.01")]
        epsilons: Vec<f64>,
        #[arg(long = "success-gap", default_value_t = 0.01)]
        success_gap: f64,
        /// Per-experiment values (default: the report path with a .csv extension).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Blind variance-based scheduler and improvements over it.
    Baseline {
        #[arg(long, conflicts_with = "data", required_unless_present = "data")]
        mixture: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "unicast-policy")]
        unicast_policy: Option<PathBuf>,
        #[arg(long = "broadcast-policy")]
        broadcast_policy: Option<PathBuf>,
        /// Monte Carlo samples used to score policies against a mixture.
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Re-run a worked example and check it against its tolerance bands.
    Reproduce {
        #[arg(value_enum)]
        example: Example,
    },
}

/// Builds the global worker pool from `--threads` or the environment.
pub fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let threads = match flag {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads(cli.common.threads)?;
    let common = &cli.common;
    match &cli.command {
        Command::Generate { config, count } => cmd_generate(common, config, *count),
        Command::Train { mode, data } => cmd_train(common, (*mode).into(), data),
        Command::Evaluate { mode, policy, data } => cmd_evaluate(common, mode.map(Mode::from), policy, data),
        Command::Validate {
            mode,
            policy,
            mixture,
            test_size,
            experiments,
            j_train,
            epsilons,
            success_gap,
            csv,
        } => cmd_validate(
            common,
            mode.map(Mode::from),
            policy,
            mixture,
            ValidationPlan {
                test_size: *test_size,
                experiments: *experiments,
                epsilons: epsilons.clone(),
                success_gap: *success_gap,
                seed: common.seed,
            },
            *j_train,
            csv.as_deref(),
        ),
        Command::Baseline {
            mixture,
            data,
            unicast_policy,
            broadcast_policy,
            samples,
        } => cmd_baseline(
            common,
            mixture.as_deref(),
            data.as_deref(),
            unicast_policy.as_deref(),
            broadcast_policy.as_deref(),
            *samples,
        ),
        Command::Reproduce { example } => cmd_reproduce(common, *example),
    }
}

fn emit<T: Serialize>(out: Option<&Path>, manifest: &RunManifest, body: &T) -> Result<(), CliError> {
    let text = formats::report_json(manifest, body);
    match out {
        Some(path) => formats::write_file(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn check_mode(expected: Option<Mode>, policy: &Policy) -> Result<(), CliError> {
    match expected {
        Some(m) if m != policy.mode() => Err(CliError::Config(format!(
            "--mode {m:?} does not match the policy file ({:?})",
            policy.mode()
        ))),
        _ => Ok(()),
    }
}

fn check_sensors(policy: &Policy, n: usize) -> Result<(), CliError> {
    if policy.n_sensors() == n {
        Ok(())
    } else {
        Err(CliError::Dimension(format!(
            "policy has {} sensors but the data has {n}",
            policy.n_sensors()
        )))
    }
}

pub fn cmd_generate(common: &Common, config: &Path, count: usize) -> Result<(), CliError> {
    if count == 0 {
        return Err(CliError::Config("--count must be positive".into()));
    }
    let out = common
        .out
        .as_deref()
        .ok_or_else(|| CliError::Config("generate needs --out".into()))?;
    let spec = formats::read_mixture(config)?;
    let data = sample_mixture(&spec, count, common.seed)?;
    formats::write_dataset(out, &data)?;
    println!("rows: {}", data.n_samples());
    let means = data.column_means();
    for (i, m) in means.iter().enumerate() {
        println!("mean x{}: {m:.6}", i + 1);
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceSummary {
    converged_runs: usize,
    min_iterations: usize,
    max_iterations: usize,
    mean_iterations: f64,
    best_restart: usize,
    best_iterations: usize,
    best_converged: bool,
    best_final_step_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    step_size: Option<f64>,
    best_objective_values: Vec<f64>,
    terminal_objectives: Vec<f64>,
}

#[derive(Serialize)]
struct TrainReport {
    mode: Mode,
    n: usize,
    samples: usize,
    policy: PolicyFile,
    j_train: f64,
    restarts: usize,
    trace_summary: TraceSummary,
}

pub fn cmd_train(common: &Common, mode: Mode, data_path: &Path) -> Result<(), CliError> {
    let data = formats::read_dataset(data_path)?;
    let config = LearningConfig {
        mode,
        restarts: common.restarts,
        ccp_options: common.ccp_options()?,
        success_gap: 0.01,
        seed: common.seed,
    };
    let mut manifest = RunManifest::new(
        "train",
        &json!({ "config": config, "data_digest": formats::file_digest(data_path)? }),
        common.seed,
    );
    let started = Instant::now();
    let trained = learning::train(&data, &config)?;
    manifest.timings.insert("train".into(), started.elapsed().as_secs_f64());

    let traces = &trained.traces;
    let best = &traces[trained.best_restart];
    let iterations: Vec<usize> = traces.iter().map(|t| t.iterations).collect();
    let report = TrainReport {
        mode,
        n: data.n_sensors(),
        samples: data.n_samples(),
        policy: PolicyFile::from_policy(&trained.policy),
        j_train: trained.j_train,
        restarts: config.restarts,
        trace_summary: TraceSummary {
            converged_runs: traces.iter().filter(|t| t.converged).count(),
            min_iterations: iterations.iter().copied().min().unwrap_or(0),
            max_iterations: iterations.iter().copied().max().unwrap_or(0),
            mean_iterations: iterations.iter().sum::<usize>() as f64 / iterations.len() as f64,
            best_restart: trained.best_restart,
            best_iterations: best.iterations,
            best_converged: best.converged,
            best_final_step_norm: best.final_step_norm,
            step_size: best.step_size,
            best_objective_values: best.objective_values.clone(),
            terminal_objectives: trained.multistart_values.clone(),
        },
    };
    eprintln!("j_train = {:.6}", trained.j_train);
    emit(common.out.as_deref(), &manifest, &report)
}

#[derive(Serialize)]
struct EvaluateReport {
    mode: Mode,
    samples: usize,
    objective: f64,
    schedule_frequencies: Vec<f64>,
}

pub fn cmd_evaluate(common: &Common, mode: Option<Mode>, policy_path: &Path, data_path: &Path) -> Result<(), CliError> {
    let (policy, _) = formats::read_policy(policy_path)?;
    check_mode(mode, &policy)?;
    let data = formats::read_dataset(data_path)?;
    check_sensors(&policy, data.n_sensors())?;
    let mut manifest = RunManifest::new(
        "evaluate",
        &json!({
            "policy": PolicyFile::from_policy(&policy),
            "data_digest": formats::file_digest(data_path)?,
        }),
        common.seed,
    );
    let started = Instant::now();
    let objective = learning::validate(&policy, &data)?;
    let mut counts = vec![0usize; data.n_sensors()];
    for row in data.rows() {
        counts[policy.schedule(row)?] += 1;
    }
    manifest.timings.insert("evaluate".into(), started.elapsed().as_secs_f64());
    let report = EvaluateReport {
        mode: policy.mode(),
        samples: data.n_samples(),
        objective,
        schedule_frequencies: counts.iter().map(|c| *c as f64 / data.n_samples() as f64).collect(),
    };
    println!("objective: {objective:.6}");
    for (i, f) in report.schedule_frequencies.iter().enumerate() {
        println!("sensor {} scheduled: {f:.6}", i + 1);
    }
    match common.out.as_deref() {
        Some(path) => formats::write_file(path, formats::report_json(&manifest, &report).as_bytes()),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct ValidateReport<'a> {
    mode: Mode,
    test_size: usize,
    experiments: usize,
    #[serde(flatten)]
    risk: &'a crate::model::RiskReport,
}

pub fn cmd_validate(
    common: &Common,
    mode: Option<Mode>,
    policy_path: &Path,
    mixture_path: &Path,
    plan: ValidationPlan,
    j_train: Option<f64>,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    let (policy, report_j_train) = formats::read_policy(policy_path)?;
    check_mode(mode, &policy)?;
    let spec = formats::read_mixture(mixture_path)?;
    check_sensors(&policy, spec.n_sensors())?;
    let j_train = j_train.or(report_j_train).ok_or_else(|| {
        CliError::Config("--j-train is required unless --policy is a training report".into())
    })?;
    if !(plan.success_gap > 0.0 && plan.success_gap < 1.0) {
        return Err(CliError::Config("--success-gap must lie in (0, 1)".into()));
    }
    let mut manifest = RunManifest::new(
        "validate",
        &json!({
            "policy": PolicyFile::from_policy(&policy),
            "mixture": formats::MixtureConfig::from_spec(&spec),
            "plan": plan,
            "j_train": j_train,
        }),
        plan.seed,
    );
    let started = Instant::now();
    let risk = learning::repeated_validation(&policy, j_train, &spec, &plan)?;
    manifest.timings.insert("validate".into(), started.elapsed().as_secs_f64());

    println!("mean J_test: {:.6} (J_train {j_train:.6})", risk.mean_j_test);
    for (eps, freq) in &risk.exceedance {
        println!("P(|J_test - J_train| > {eps}) = {freq:.4}");
    }
    let report = ValidateReport {
        mode: policy.mode(),
        test_size: plan.test_size,
        experiments: plan.experiments,
        risk: &risk,
    };
    let csv_path = csv
        .map(Path::to_path_buf)
        .or_else(|| common.out.as_ref().map(|p| p.with_extension("csv")));
    if let Some(path) = csv_path {
        let mut text = String::from("experiment,j_test\n");
        for (k, v) in risk.j_test_values.iter().enumerate() {
            text.push_str(&format!("{k},{v:.16e}\n"));
        }
        formats::write_file(&path, text.as_bytes())?;
    }
    emit(common.out.as_deref(), &manifest, &report)
}

#[derive(Serialize)]
struct Improvement {
    objective: f64,
    improvement_over_blind: f64,
}

#[derive(Serialize)]
struct BaselineReport {
    source: &'static str,
    blind_schedule: usize,
    blind_estimates: Vec<f64>,
    blind_objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    unicast: Option<Improvement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    broadcast: Option<Improvement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    broadcast_over_unicast: Option<f64>,
}

fn policy_content(path: &Path) -> Result<PolicyFile, CliError> {
    formats::read_policy(path).map(|(policy, _)| PolicyFile::from_policy(&policy))
}

pub fn cmd_baseline(
    common: &Common,
    mixture: Option<&Path>,
    data: Option<&Path>,
    unicast_policy: Option<&Path>,
    broadcast_policy: Option<&Path>,
    samples: usize,
) -> Result<(), CliError> {
    let wants_policies = unicast_policy.is_some() || broadcast_policy.is_some();
    let (source, input, moments, backend) = match (mixture, data) {
        (Some(path), None) => {
            let spec = formats::read_mixture(path)?;
            let backend = if wants_policies {
                Some(ExpectationBackend::monte_carlo(spec.clone(), samples, common.seed)?)
            } else {
                None
            };
            (
                "mixture",
                json!(formats::MixtureConfig::from_spec(&spec)),
                analytic_moments(&spec),
                backend,
            )
        }
        (None, Some(path)) => {
            let data = formats::read_dataset(path)?;
            let moments = empirical_moments(&data)?;
            (
                "data",
                json!(formats::file_digest(path)?),
                moments,
                Some(ExpectationBackend::empirical(data)),
            )
        }
        _ => return Err(CliError::Config("baseline needs exactly one of --mixture or --data".into())),
    };
    let mut manifest = RunManifest::new(
        "baseline",
        &json!({
            "source": source,
            "input": input,
            "unicast_policy": unicast_policy.map(policy_content).transpose()?,
            "broadcast_policy": broadcast_policy.map(policy_content).transpose()?,
            "samples": samples,
        }),
        common.seed,
    );
    let started = Instant::now();
    let blind = blind_baseline(&moments);
    let score = |path: Option<&Path>, expected: Mode| -> Result<Option<Improvement>, CliError> {
        let Some(path) = path else { return Ok(None) };
        let (policy, _) = formats::read_policy(path)?;
        check_mode(Some(expected), &policy)?;
        let backend = backend.as_ref().expect("backend exists when policies are given");
        check_sensors(&policy, backend.n_sensors())?;
        let objective = policy.objective(backend)?;
        Ok(Some(Improvement {
            objective,
            improvement_over_blind: 1.0 - objective / blind.objective,
        }))
    };
    let unicast = score(unicast_policy, Mode::Unicast)?;
    let broadcast = score(broadcast_policy, Mode::Broadcast)?;
    manifest.timings.insert("baseline".into(), started.elapsed().as_secs_f64());
    let broadcast_over_unicast = match (&unicast, &broadcast) {
        (Some(u), Some(b)) => Some(1.0 - b.objective / u.objective),
        _ => None,
    };
    println!("blind scheduler: sensor {} (objective {:.6})", blind.schedule_index + 1, blind.objective);
    if let Some(u) = &unicast {
        println!("unicast: {:.6} ({:.2}% better than blind)", u.objective, 100.0 * u.improvement_over_blind);
    }
    if let Some(b) = &broadcast {
        println!("broadcast: {:.6} ({:.2}% better than blind)", b.objective, 100.0 * b.improvement_over_blind);
    }
    if let Some(r) = broadcast_over_unicast {
        println!("broadcast over unicast: {:.2}%", 100.0 * r);
    }
    let report = BaselineReport {
        source,
        blind_schedule: blind.schedule_index + 1,
        blind_estimates: blind.estimates,
        blind_objective: blind.objective,
        unicast,
        broadcast,
        broadcast_over_unicast,
    };
    emit(common.out.as_deref(), &manifest, &report)
}

pub fn cmd_reproduce(common: &Common, example: Example) -> Result<(), CliError> {
    let ccp = common.ccp_options()?;
    let mixture = reproduce::MixtureSettings {
        restarts: common.restarts,
        seed: common.seed,
        ccp,
        ..Default::default()
    };
    let (name, checks, body, seconds) = match example {
        Example::UnicastMixture => {
            let o = reproduce::unicast_mixture(&mixture)?;
            ("unicast-mixture", o.checks.clone(), serde_json::to_value(&o), o.seconds)
        }
        Example::BroadcastMixture => {
            let o = reproduce::broadcast_mixture(&mixture, None)?;
            ("broadcast-mixture", o.checks.clone(), serde_json::to_value(&o), o.seconds)
        }
        Example::DataDriven => {
            let settings = reproduce::DataDrivenSettings {
                restarts: common.restarts,
                seed: common.seed,
                ccp,
                ..Default::default()
            };
            let o = reproduce::data_driven(&settings)?;
            ("data-driven", o.checks.clone(), serde_json::to_value(&o), o.seconds)
        }
    };
    let mut body = body.map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(map) = body.as_object_mut() {
        map.remove("seconds");
    }
    for check in &checks {
        println!("{}", check.line());
    }
    if let Some(dir) = common.out.as_deref() {
        let mut manifest = RunManifest::new(
            "reproduce",
            &json!({ "example": name, "restarts": common.restarts, "ccp": ccp }),
            common.seed,
        );
        manifest.timings = BTreeMap::from([(name.to_string(), seconds)]);
        let path = dir.join(format!("{name}.json"));
        formats::write_file(&path, formats::report_json(&manifest, &body).as_bytes())?;
    }
    if reproduce::all_passed(&checks) {
        Ok(())
    } else {
        Err(CliError::Acceptance)
    }
}
