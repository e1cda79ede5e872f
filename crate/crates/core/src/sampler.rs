//! Gaussian-mixture data generation and moment computation.
//!
//! # Random streams
//!
//! Samples are produced in blocks of [`SAMPLE_BLOCK`] rows. Block `c` draws
//! from ChaCha20 seeded with `seed` (via `SeedableRng::seed_from_u64`) on
//! stream `c`. Each row consumes one uniform `f64` for the component choice
//! (inverse CDF over cumulative weights) followed by `n` standard normals
//! (ziggurat, `rand_distr::StandardNormal`), mapped through the lower
//! Cholesky factor of the chosen covariance. Blocks are independent, so the
//! output is identical for any number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{GaussianMixtureSpec, MomentSet, SampleMatrix};
use crate::reduce::sum_rows;

/// Rows generated per independent random stream.
pub const SAMPLE_BLOCK: usize = 1 << 16;

/// Smallest dataset a Monte Carlo mixture backend may draw.
pub const MIN_MONTE_CARLO_SAMPLES: usize = 1000;

/// Lower Cholesky factor of a symmetric matrix, or `None` if a pivot is not
/// strictly positive.
pub fn cholesky(matrix: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = matrix.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let pivot = matrix[i][i] - dot;
                if pivot.is_nan() || pivot <= 0.0 {
                    return None;
                }
                l[i][i] = pivot.sqrt();
            } else {
                l[i][j] = (matrix[i][j] - dot) / l[j][j];
            }
        }
    }
    Some(l)
}

struct PreparedComponent {
    upper_cdf: f64,
    mean: Vec<f64>,
    factor: Vec<Vec<f64>>,
}

/// Draws `count` rows from the mixture. Deterministic in `(spec, count, seed)`.
pub fn sample_mixture(spec: &GaussianMixtureSpec, count: usize, seed: u64) -> Result<SampleMatrix> {
    if count == 0 {
        return Err(Error::Empty);
    }
    let n = spec.n_sensors();
    let mut cdf = 0.0;
    let prepared = spec
        .components()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            cdf += c.weight;
            Ok(PreparedComponent {
                upper_cdf: cdf,
                mean: c.mean.clone(),
                factor: cholesky(&c.covariance).ok_or(Error::CholeskyFailure(k))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut data = vec![0.0; count * n];
    data.par_chunks_mut(SAMPLE_BLOCK * n)
        .enumerate()
        .for_each(|(block, out)| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(block as u64);
            let mut z = vec![0.0; n];
            for row in out.chunks_exact_mut(n) {
                let u: f64 = rng.random();
                let comp = prepared
                    .iter()
                    .find(|c| u < c.upper_cdf)
                    .unwrap_or_else(|| prepared.last().expect("mixture has components"));
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                for (i, x) in row.iter_mut().enumerate() {
                    let lz: f64 = comp.factor[i][..=i].iter().zip(&z).map(|(l, z)| l * z).sum();
                    *x = comp.mean[i] + lz;
                }
            }
        });
    SampleMatrix::from_flat(data, n)
}

/// Exact mixture moments: `E[X] = Σ w_k μ_k`, `E[XXᵀ] = Σ w_k (Σ_k + μ_k μ_kᵀ)`.
pub fn analytic_moments(spec: &GaussianMixtureSpec) -> MomentSet {
    let n = spec.n_sensors();
    let mut mean = vec![0.0; n];
    let mut second = vec![0.0; n * n];
    for c in spec.components() {
        for i in 0..n {
            mean[i] += c.weight * c.mean[i];
            for j in 0..n {
                second[i * n + j] += c.weight * (c.covariance[i][j] + c.mean[i] * c.mean[j]);
            }
        }
    }
    MomentSet { mean, second }
}

/// Sample moments with `1/N` normalization.
pub fn empirical_moments(data: &SampleMatrix) -> Result<MomentSet> {
    let n = data.n_sensors();
    let sums = sum_rows(data.as_flat(), n, n + n * n, |row, acc| {
        let (mean, second) = acc.split_at_mut(n);
        for (i, xi) in row.iter().enumerate() {
            mean[i] += xi;
            for (j, xj) in row.iter().enumerate() {
                second[i * n + j] += xi * xj;
            }
        }
    });
    let scale = 1.0 / data.n_samples() as f64;
    let moments = MomentSet {
        mean: sums[..n].iter().map(|s| s * scale).collect(),
        second: sums[n..].iter().map(|s| s * scale).collect(),
    };
    moments.check_nondegenerate()?;
    Ok(moments)
}

/// Source of the expectations inside the objective and subgradients.
///
/// A Monte Carlo mixture backend draws one fixed dataset when it is built and
/// then behaves exactly like an empirical backend over that dataset.
#[derive(Debug, Clone)]
pub enum ExpectationBackend {
    Empirical(SampleMatrix),
    MonteCarloMixture {
        spec: GaussianMixtureSpec,
        sample_count: usize,
        seed: u64,
        samples: SampleMatrix,
    },
}

impl ExpectationBackend {
    pub fn empirical(data: SampleMatrix) -> Self {
        Self::Empirical(data)
    }

    pub fn monte_carlo(spec: GaussianMixtureSpec, sample_count: usize, seed: u64) -> Result<Self> {
        if sample_count < MIN_MONTE_CARLO_SAMPLES {
            return Err(Error::InvalidOptions(format!(
                "Monte Carlo backends need at least {MIN_MONTE_CARLO_SAMPLES} samples, got {sample_count}"
            )));
        }
        let samples = sample_mixture(&spec, sample_count, seed)?;
        Ok(Self::MonteCarloMixture {
            spec,
            sample_count,
            seed,
            samples,
        })
    }

    pub fn samples(&self) -> &SampleMatrix {
        match self {
            Self::Empirical(data) => data,
            Self::MonteCarloMixture { samples, .. } => samples,
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.samples().n_sensors()
    }

    /// Moments of the backend's sample measure.
    pub fn moments(&self) -> Result<MomentSet> {
        empirical_moments(self.samples())
    }
}
