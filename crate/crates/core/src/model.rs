//! Domain types shared by the samplers, solvers and the learning workflow.
//!
//! Sensors are indexed from 0 throughout the library. The CLI reports them
//! 1-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INPUT_TOL: f64 = 1e-12;
const DERIVED_TOL: f64 = 1e-9;

/// An N×n table of sensor observations stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: Vec<f64>,
    n_samples: usize,
    n_sensors: usize,
}

impl SampleMatrix {
    /// Validates a table given as rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Empty);
        };
        let n = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::Ragged {
                    row: r,
                    expected: n,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, n)
    }

    /// Validates a row-major buffer with `n_sensors` columns.
    pub fn from_flat(data: Vec<f64>, n_sensors: usize) -> Result<Self> {
        if n_sensors < 2 {
            return Err(Error::TooFewSensors(n_sensors));
        }
        if data.is_empty() {
            return Err(Error::Empty);
        }
        if data.len() % n_sensors != 0 {
            return Err(Error::Ragged {
                row: data.len() / n_sensors,
                expected: n_sensors,
                found: data.len() % n_sensors,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / n_sensors,
                col: pos % n_sensors,
            });
        }
        Ok(Self {
            n_samples: data.len() / n_sensors,
            data,
            n_sensors,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n_sensors..(k + 1) * self.n_sensors]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_sensors)
    }

    /// Column means, reduced deterministically.
    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n_sensors;
        let sums = crate::reduce::sum_rows(&self.data, n, n, |row, acc| {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x;
            }
        });
        sums.into_iter().map(|s| s / self.n_samples as f64).collect()
    }

    /// Copy with `shift` added to every row.
    pub fn shifted(&self, shift: &[f64]) -> Result<Self> {
        check_dim(self.n_sensors, shift.len())?;
        let data = self
            .data
            .chunks_exact(self.n_sensors)
            .flat_map(|row| row.iter().zip(shift).map(|(x, c)| x + c))
            .collect();
        Self::from_flat(data, self.n_sensors)
    }

    /// Rows `range` as a new matrix.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let n = self.n_sensors;
        Self::from_flat(self.data[range.start * n..range.end * n].to_vec(), n)
    }
}

/// One weighted Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

/// A validated Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureComponents", into = "MixtureComponents")]
pub struct GaussianMixtureSpec {
    components: Vec<MixtureComponent>,
}

#[derive(Serialize, Deserialize)]
struct MixtureComponents {
    components: Vec<MixtureComponent>,
}

impl TryFrom<MixtureComponents> for GaussianMixtureSpec {
    type Error = Error;

    fn try_from(raw: MixtureComponents) -> Result<Self> {
        Self::new(raw.components)
    }
}

impl From<GaussianMixtureSpec> for MixtureComponents {
    fn from(spec: GaussianMixtureSpec) -> Self {
        Self {
            components: spec.components,
        }
    }
}

impl GaussianMixtureSpec {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidMixture("no components".into()));
        };
        let n = first.mean.len();
        if n < 2 {
            return Err(Error::TooFewSensors(n));
        }
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::InvalidMixture(format!(
                    "component {k} weight {} outside (0, 1]",
                    c.weight
                )));
            }
            total += c.weight;
            if c.mean.len() != n || c.covariance.len() != n {
                return Err(Error::InvalidMixture(format!(
                    "component {k} has dimension {}, expected {n}",
                    c.mean.len()
                )));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMixture(format!("component {k} mean is not finite")));
            }
            for (i, row) in c.covariance.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::InvalidMixture(format!(
                        "component {k} covariance row {i} has length {}",
                        row.len()
                    )));
                }
                for (j, v) in row.iter().enumerate() {
                    if !v.is_finite() || (v - c.covariance[j][i]).abs() > INPUT_TOL {
                        return Err(Error::InvalidMixture(format!(
                            "component {k} covariance is not symmetric at ({i}, {j})"
                        )));
                    }
                }
            }
            crate::sampler::cholesky(&c.covariance).ok_or(Error::CholeskyFailure(k))?;
        }
        if (total - 1.0).abs() > INPUT_TOL {
            return Err(Error::InvalidMixture(format!("weights sum to {total}")));
        }
        Ok(Self { components })
    }

    /// The bivariate mixture used throughout the worked examples:
    /// ¾·N(0, I) + ¼·N((4, 2), [[1, 0.4], [0.4, 1]]).
    pub fn reference_bivariate() -> Self {
        Self::new(vec![
            MixtureComponent {
                weight: 0.75,
                mean: vec![0.0, 0.0],
                covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            },
            MixtureComponent {
                weight: 0.25,
                mean: vec![4.0, 2.0],
                covariance: vec![vec![1.0, 0.4], vec![0.4, 1.0]],
            },
        ])
        .expect("reference mixture is valid")
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn n_sensors(&self) -> usize {
        self.components[0].mean.len()
    }
}

/// First and second moments: `mean[i] = E[X_i]`, `second(i, j) = E[X_i X_j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub mean: Vec<f64>,
    /// Row-major n×n.
    pub second: Vec<f64>,
}

impl MomentSet {
    /// Checks symmetry and strictly positive variances.
    pub fn new(mean: Vec<f64>, second: Vec<f64>) -> Result<Self> {
        let n = mean.len();
        check_dim(n * n, second.len())?;
        let m = Self { mean, second };
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (m.second(i, j), m.second(j, i));
                if (a - b).abs() > DERIVED_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidOptions(format!(
                        "second-moment matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        m.check_nondegenerate()?;
        Ok(m)
    }

    pub fn n_sensors(&self) -> usize {
        self.mean.len()
    }

    pub fn second(&self, i: usize, j: usize) -> f64 {
        self.second[i * self.mean.len() + j]
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.second(i, i) - self.mean[i] * self.mean[i]
    }

    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.second(i, j) - self.mean[i] * self.mean[j]
    }

    pub fn check_nondegenerate(&self) -> Result<()> {
        for i in 0..self.n_sensors() {
            let variance = self.variance(i);
            if variance.is_nan() || variance <= 0.0 {
                return Err(Error::DegenerateVariance { sensor: i, variance });
            }
        }
        Ok(())
    }
}

/// Erasure-case estimates of a unicast network, one per sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnicastPolicy {
    pub xhat: Vec<f64>,
}

impl UnicastPolicy {
    pub fn new(xhat: Vec<f64>) -> Result<Self> {
        if xhat.len() < 2 {
            return Err(Error::TooFewSensors(xhat.len()));
        }
        if let Some(col) = xhat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: 0, col });
        }
        Ok(Self { xhat })
    }

    pub fn n_sensors(&self) -> usize {
        self.xhat.len()
    }
}

/// Affine broadcast estimators `x̂_i = w_ij·x_j + b_ij`, one per ordered pair
/// `i ≠ j`.
///
/// `theta` is laid out in `n` blocks. Block `j` holds the estimators that use
/// sensor `j` as side information: the pairs `(w_ij, b_ij)` for every `i ≠ j`
/// in increasing `i`. For two sensors this gives `(w_21, b_21, w_12, b_12)`
/// in 1-based notation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastPolicy {
    n_sensors: usize,
    theta: Vec<f64>,
}

impl BroadcastPolicy {
    /// Length of `theta` for `n` sensors: `2n(n-1)`.
    pub fn dim(n: usize) -> usize {
        2 * n * n.saturating_sub(1)
    }

    pub fn new(n_sensors: usize, theta: Vec<f64>) -> Result<Self> {
        if n_sensors < 2 {
            return Err(Error::TooFewSensors(n_sensors));
        }
        check_dim(Self::dim(n_sensors), theta.len())?;
        if let Some(col) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: 0, col });
        }
        Ok(Self { n_sensors, theta })
    }

    pub fn zeros(n_sensors: usize) -> Result<Self> {
        Self::new(n_sensors, vec![0.0; Self::dim(n_sensors)])
    }

    /// Builds a policy from `(receiver, side, weight, bias)` entries; missing
    /// pairs are zero.
    pub fn from_pairs(
        n_sensors: usize,
        pairs: impl IntoIterator<Item = (usize, usize, f64, f64)>,
    ) -> Result<Self> {
        let mut policy = Self::zeros(n_sensors)?;
        for (i, j, w, b) in pairs {
            if i == j || i >= n_sensors || j >= n_sensors {
                return Err(Error::InvalidOptions(format!("invalid estimator pair ({i}, {j})")));
            }
            let at = Self::offset(n_sensors, i, j);
            policy.theta[at] = w;
            policy.theta[at + 1] = b;
        }
        Self::new(n_sensors, policy.theta)
    }

    /// `(receiver, side, weight, bias)` for every pair, in `theta` order.
    pub fn pairs(&self) -> Vec<(usize, usize, f64, f64)> {
        let n = self.n_sensors;
        (0..n)
            .flat_map(|j| (0..n).filter(move |&i| i != j).map(move |i| (i, j)))
            .map(|(i, j)| (i, j, self.weight(i, j), self.bias(i, j)))
            .collect()
    }

    /// Position of `w_ij` in `theta`; `b_ij` follows it.
    pub fn offset(n: usize, receiver: usize, side: usize) -> usize {
        debug_assert_ne!(receiver, side);
        let within = if receiver < side { receiver } else { receiver - 1 };
        side * 2 * (n - 1) + 2 * within
    }

    pub fn weight(&self, receiver: usize, side: usize) -> f64 {
        self.theta[Self::offset(self.n_sensors, receiver, side)]
    }

    pub fn bias(&self, receiver: usize, side: usize) -> f64 {
        self.theta[Self::offset(self.n_sensors, receiver, side) + 1]
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
}

/// Convergence history of one CCP run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcpTrace {
    pub iterates: Vec<Vec<f64>>,
    pub objective_values: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_step_norm: f64,
    /// Spectral radius of the inverse system matrix (broadcast runs only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step_size: Option<f64>,
}

impl CcpTrace {
    pub fn final_objective(&self) -> f64 {
        *self.objective_values.last().expect("trace holds the initial point")
    }

    pub fn final_iterate(&self) -> &[f64] {
        self.iterates.last().expect("trace holds the initial point")
    }
}

/// Out-of-sample validation summary over repeated test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub j_train: f64,
    pub j_test_values: Vec<f64>,
    pub mean_j_test: f64,
    /// `(epsilon, fraction of experiments with |J_test - j_train| > epsilon)`.
    pub exceedance: Vec<(f64, f64)>,
    pub success: bool,
    pub relative_gap: f64,
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
