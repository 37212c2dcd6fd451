//! Observations and the simulators that regenerate them.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::rng::replication_rng;

/// Fixed observations X_i = (y_i, z_i), i = 1..n.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub y: Array1<f64>,
    pub z: Array2<f64>,
}

impl SampleSet {
    pub fn new(y: Array1<f64>, z: Array2<f64>) -> Result<Self> {
        check_len("response length", z.nrows(), y.len())?;
        Ok(Self { y, z })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn covariates(&self, i: usize) -> ArrayView1<'_, f64> {
        self.z.row(i)
    }
}

/// Gaussian mixture regression parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub pi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
}

impl MixtureParams {
    pub fn components(&self) -> usize {
        self.pi.len()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.beta.iter().map(Vec::len).collect()
    }

    pub fn validate(&self, sigma_min: f64, sigma_max: f64) -> Result<()> {
        let r = self.pi.len();
        if r == 0 || self.sigma.len() != r || self.beta.len() != r {
            return Err(Error::InvalidModel(
                "mixture needs matching numbers of weights, scales and coefficient blocks".into(),
            ));
        }
        if self.pi.iter().any(|p| *p < 0.0) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel("mixing weights must lie in the simplex".into()));
        }
        if !(sigma_min > 0.0) {
            return Err(Error::InvalidModel("sigma_min must be positive".into()));
        }
        if self.sigma.iter().any(|s| *s < sigma_min || *s > sigma_max) {
            return Err(Error::InvalidModel(format!(
                "scales must lie in [{sigma_min}, {sigma_max}]"
            )));
        }
        Ok(())
    }

    /// Flattened coefficient vector (β₁, …, β_r).
    pub fn flat_beta(&self) -> Vec<f64> {
        self.beta.iter().flatten().copied().collect()
    }
}

/// Response simulator for a fixed design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    /// y = zᵀθ⁰ + σ·N(0,1).
    LinearGaussian { theta0: Vec<f64>, sigma: f64 },
    /// Component k with probability π_k, then y = β_kᵀz_k + σ_k·N(0,1).
    MixtureRegression { params: MixtureParams },
    /// Bernoulli response with logistic link on zᵀθ⁰.
    Logistic { theta0: Vec<f64> },
}

impl Generator {
    pub fn covariate_dim(&self) -> usize {
        match self {
            Generator::LinearGaussian { theta0, .. } | Generator::Logistic { theta0 } => {
                theta0.len()
            }
            Generator::MixtureRegression { params } => params.beta.iter().map(Vec::len).sum(),
        }
    }

    pub fn draw_response<R: Rng>(&self, z: ArrayView1<f64>, rng: &mut R) -> f64 {
        match self {
            Generator::LinearGaussian { theta0, sigma } => {
                let mean: f64 = z.iter().zip(theta0).map(|(a, b)| a * b).sum();
                let e: f64 = rng.sample(StandardNormal);
                mean + sigma * e
            }
            Generator::MixtureRegression { params } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = params.pi.len() - 1;
                for (idx, p) in params.pi.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        k = idx;
                        break;
                    }
                }
                let offset: usize = params.beta[..k].iter().map(Vec::len).sum();
                let mean: f64 = params.beta[k]
                    .iter()
                    .enumerate()
                    .map(|(j, b)| b * z[offset + j])
                    .sum();
                let e: f64 = rng.sample(StandardNormal);
                mean + params.sigma[k] * e
            }
            Generator::Logistic { theta0 } => {
                let eta: f64 = z.iter().zip(theta0).map(|(a, b)| a * b).sum();
                let prob = 1.0 / (1.0 + (-eta).exp());
                if rng.random::<f64>() < prob {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Fresh responses on the fixed design `z`.
    pub fn sample<R: Rng>(&self, z: &Array2<f64>, rng: &mut R) -> Result<SampleSet> {
        check_len("generator covariates", self.covariate_dim(), z.ncols())?;
        let y = Array1::from_iter(z.rows().into_iter().map(|row| self.draw_response(row, rng)));
        SampleSet::new(y, z.clone())
    }
}

/// n×p standard Gaussian design, optionally with columns scaled to ‖z_j‖_n = 1.
pub fn gaussian_design(n: usize, p: usize, seed: u64, normalize: bool) -> Array2<f64> {
    let mut rng = replication_rng(seed, u64::MAX);
    let mut z = Array2::from_shape_simple_fn((n, p), || rng.sample::<f64, _>(StandardNormal));
    if normalize {
        linalg::normalize_columns(&mut z);
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalized_design_has_unit_columns() {
        let z = gaussian_design(50, 7, 3, true);
        for nrm in linalg::column_norms_n(z.view()) {
            assert!((nrm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_free_linear_generator_is_exact() {
        let z = gaussian_design(10, 3, 1, false);
        let g = Generator::LinearGaussian {
            theta0: vec![1.0, -2.0, 0.5],
            sigma: 0.0,
        };
        let s = g.sample(&z, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for i in 0..10 {
            let m = z[[i, 0]] - 2.0 * z[[i, 1]] + 0.5 * z[[i, 2]];
            assert!((s.y[i] - m).abs() < 1e-14);
        }
    }

    #[test]
    fn mixture_params_validation() {
        let ok = MixtureParams {
            pi: vec![0.3, 0.7],
            sigma: vec![1.0, 0.5],
            beta: vec![vec![1.0], vec![-1.0, 2.0]],
        };
        assert!(ok.validate(0.1, 2.0).is_ok());
        assert_eq!(ok.block_sizes(), vec![1, 2]);
        let bad = MixtureParams {
            pi: vec![0.3, 0.6],
            ..ok.clone()
        };
        assert!(bad.validate(0.1, 2.0).is_err());
        assert!(ok.validate(0.6, 2.0).is_err());
    }

    #[test]
    fn generator_rejects_wrong_design_width() {
        let z = gaussian_design(5, 2, 1, false);
        let g = Generator::LinearGaussian {
            theta0: vec![1.0; 3],
            sigma: 1.0,
        };
        assert!(g.sample(&z, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
