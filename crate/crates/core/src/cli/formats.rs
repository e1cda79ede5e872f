//! On-disk formats: CSV datasets, JSON mixture configs, policy files and
//! report envelopes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::learning::{Mode, Policy};
use crate::model::{BroadcastPolicy, GaussianMixtureSpec, MixtureComponent, SampleMatrix, UnicastPolicy};

pub const SCHEMA_VERSION: u32 = 1;

/// Human-readable description of the broadcast parameter layout.
pub const THETA_LAYOUT: &str =
    "blocks j = 1..n by side-information sensor; block j lists (w_ij, b_ij) for i != j in increasing i";

/// Writes `data` as CSV with header `x1,…,xn`, 17 significant digits per
/// value and `\n` line endings.
pub fn write_dataset(path: &Path, data: &SampleMatrix) -> Result<(), CliError> {
    let mut out = String::with_capacity(data.n_samples() * data.n_sensors() * 24);
    let header: Vec<String> = (1..=data.n_sensors()).map(|i| format!("x{i}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in data.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v:.16e}"));
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<SampleMatrix, CliError> {
    let text = read_file(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let n = reader
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .len();
    let mut flat = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if record.len() != n {
            return Err(CliError::Config(format!(
                "{}: row {} has {} fields, expected {n}",
                path.display(),
                k + 1,
                record.len()
            )));
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Config(format!("{}: row {}: cannot parse {field:?}", path.display(), k + 1))
            })?;
            flat.push(v);
        }
    }
    Ok(SampleMatrix::from_flat(flat, n)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub schema_version: u32,
    pub components: Vec<MixtureComponent>,
}

impl MixtureConfig {
    pub fn from_spec(spec: &GaussianMixtureSpec) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            components: spec.components().to_vec(),
        }
    }
}

pub fn read_mixture(path: &Path) -> Result<GaussianMixtureSpec, CliError> {
    let config: MixtureConfig = read_json(path)?;
    check_schema(path, config.schema_version)?;
    Ok(GaussianMixtureSpec::new(config.components)?)
}

/// Policy file shared by `train`, `evaluate`, `validate` and `baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub schema_version: u32,
    pub mode: Mode,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub xhat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub layout: Option<String>,
}

impl PolicyFile {
    pub fn from_policy(policy: &Policy) -> Self {
        match policy {
            Policy::Unicast(p) => Self {
                schema_version: SCHEMA_VERSION,
                mode: Mode::Unicast,
                n: p.n_sensors(),
                xhat: Some(p.xhat.clone()),
                theta: None,
                layout: None,
            },
            Policy::Broadcast(p) => Self {
                schema_version: SCHEMA_VERSION,
                mode: Mode::Broadcast,
                n: p.n_sensors(),
                xhat: None,
                theta: Some(p.theta().to_vec()),
                layout: Some(THETA_LAYOUT.to_string()),
            },
        }
    }

    pub fn to_policy(&self) -> Result<Policy, CliError> {
        match (self.mode, &self.xhat, &self.theta) {
            (Mode::Unicast, Some(xhat), None) => {
                if xhat.len() != self.n {
                    return Err(CliError::Config(format!(
                        "policy declares n = {} but xhat has {} entries",
                        self.n,
                        xhat.len()
                    )));
                }
                Ok(Policy::Unicast(UnicastPolicy::new(xhat.clone())?))
            }
            (Mode::Broadcast, None, Some(theta)) => {
                Ok(Policy::Broadcast(BroadcastPolicy::new(self.n, theta.clone())?))
            }
            _ => Err(CliError::Config(
                "policy needs `xhat` for unicast mode or `theta` for broadcast mode".into(),
            )),
        }
    }
}

/// Reads a policy file, or the `policy` member of a training report.
pub fn read_policy(path: &Path) -> Result<(Policy, Option<f64>), CliError> {
    let value: serde_json::Value = read_json(path)?;
    let (policy_value, j_train) = match value.get("policy") {
        Some(inner) => (inner.clone(), value.get("j_train").and_then(|v| v.as_f64())),
        None => (value, None),
    };
    let file: PolicyFile = serde_json::from_value(policy_value)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    check_schema(path, file.schema_version)?;
    Ok((file.to_policy()?, j_train))
}

/// Provenance block embedded in every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub artifact_version: String,
    /// Wall-clock seconds per phase. Excluded from the digest.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, resolved_config: &serde_json::Value, seed: u64) -> Self {
        let bytes = serde_json::to_vec(resolved_config).expect("config serializes");
        Self {
            command: command.to_string(),
            config_digest: hex::encode(Sha256::digest(&bytes)),
            seed,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            timings: BTreeMap::new(),
        }
    }
}

/// Report envelope: schema version and manifest followed by the body.
#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub schema_version: u32,
    pub manifest: &'a RunManifest,
    #[serde(flatten)]
    pub body: &'a T,
}

pub fn report_json<T: Serialize>(manifest: &RunManifest, body: &T) -> String {
    let report = Report {
        schema_version: SCHEMA_VERSION,
        manifest,
        body,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    text
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn check_schema(path: &Path, version: u32) -> Result<(), CliError> {
    if version == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{}: unsupported schema_version {version}",
            path.display()
        )))
    }
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// SHA-256 of a file's bytes, so manifests identify inputs by content rather
/// than by location.
pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    let mut file = fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    file.write_all(bytes)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
