use serde::{Deserialize, Serialize};

use super::dudley::{dudley_bound_opt, dudley_entropy_bound};
use super::hull::{dual_norm_gamma2_bound, gaussian_sup_mc, l1_hull_cloud_embedded};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sample::gaussian_design;
use crate::stats::{linear_fit, LinearFit};

/// Number of random points added to the 2p + 1 fixed points of each hull
/// surrogate, as a function of n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum ExtraSamples {
    Fixed(usize),
    /// ⌈c·n⌉ points, so finer scales are resolved as n grows.
    PerObservation(f64),
}

impl ExtraSamples {
    pub fn count(&self, n: usize) -> usize {
        match *self {
            Self::Fixed(k) => k,
            Self::PerObservation(c) => (c * n as f64).ceil() as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogfactorConfig {
    pub p: usize,
    pub n_grid: Vec<usize>,
    pub extra: ExtraSamples,
    pub reps: usize,
    pub seed: u64,
}

impl LogfactorConfig {
    /// p = 64, n = 2⁶..2¹⁴, n/2 random hull points.
    pub fn default_grid(seed: u64) -> Self {
        Self {
            p: 64,
            n_grid: (6..=14).map(|k| 1usize << k).collect(),
            extra: ExtraSamples::PerObservation(0.5),
            reps: 1000,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogfactorRow {
    pub n: usize,
    pub p: usize,
    pub surrogate_size: usize,
    pub k_n: f64,
    pub dudley: f64,
    pub depth: usize,
    pub dualnorm: f64,
    pub mc_sup: f64,
    pub mc_se: f64,
    /// Dudley with the entropy bound inserted, optimized over S.
    pub dudley_entropy: f64,
    /// dudley / dualnorm.
    pub ratio: f64,
    pub ratio_mc: f64,
    pub dual_over_mc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogfactorTable {
    pub rows: Vec<LogfactorRow>,
    /// ratio ≈ a + b log n.
    pub fit: LinearFit,
    /// dudley_entropy / dualnorm ≈ a + b log n.
    pub entropy_fit: LinearFit,
    /// max / min of dualnorm / mc_sup over the grid.
    pub dual_mc_band: f64,
}

/// Dudley's bound against the dual-norm bound on ℓ1-hull surrogates of
/// n-normalized Gaussian designs, one row per n.
pub fn logfactor_study(cfg: &LogfactorConfig) -> Result<LogfactorTable> {
    if cfg.n_grid.len() < 2 || cfg.p == 0 {
        return Err(Error::invalid("the study needs p > 0 and at least two values of n"));
    }
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let seed = derive_seed(cfg.seed, n as u64);
        let psi = gaussian_design(n, cfg.p, seed, true);
        let hull = l1_hull_cloud_embedded(psi.view(), cfg.extra.count(n), derive_seed(seed, 1))?;
        let opt = dudley_bound_opt(&hull.cloud);
        let dualnorm = dual_norm_gamma2_bound(psi.view());
        let mc = gaussian_sup_mc(&hull.cloud, cfg.reps, derive_seed(seed, 2))?;
        let (_, dudley_entropy) = dudley_entropy_bound(cfg.p, n, hull.k_n);
        rows.push(LogfactorRow {
            n,
            p: cfg.p,
            surrogate_size: hull.cloud.len(),
            k_n: hull.k_n,
            dudley: opt.value,
            depth: opt.depth,
            dualnorm,
            mc_sup: mc.mean,
            mc_se: mc.std_error,
            dudley_entropy,
            ratio: opt.value / dualnorm,
            ratio_mc: opt.value / mc.mean,
            dual_over_mc: dualnorm / mc.mean,
        });
    }
    let log_n: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let entropy: Vec<f64> = rows.iter().map(|r| r.dudley_entropy / r.dualnorm).collect();
    let band: Vec<f64> = rows.iter().map(|r| r.dual_over_mc).collect();
    let hi = band.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = band.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LogfactorTable {
        fit: linear_fit(&log_n, &ratios)?,
        entropy_fit: linear_fit(&log_n, &entropy)?,
        dual_mc_band: hi / lo,
        rows,
    })
}
