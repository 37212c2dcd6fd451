use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use super::cover::FarthestPointOrder;
use crate::emp_process::hoeffding_bound;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{fill_gaussian, map_replications, replication_rng};
use crate::stats::{Multiplier, ProcessEstimate, SearchMethod};

/// Finite surrogate of {ψθ : ‖θ‖₁ ≤ 1} with the θ behind every point.
///
/// Point 0 is the origin, points 1..=2p are the signed vertices ±ψ_j in the
/// order +ψ_1, −ψ_1, +ψ_2, ..., and the rest are random sign averages
/// (1/k) Σ ±e_j over k indices drawn with replacement, k a power of two.
#[derive(Debug, Clone)]
pub struct HullCloud {
    pub cloud: PointCloud,
    pub weights: Vec<Vec<f64>>,
    pub p: usize,
    pub k_n: f64,
    /// Points stored through the Cholesky isometry rather than in ℝ^n.
    pub embedded: bool,
}

/// ℓ1-hull surrogate in the raw n-dimensional coordinates.
pub fn l1_hull_cloud(psi: ArrayView2<f64>, extra: usize, seed: u64) -> Result<HullCloud> {
    let weights = hull_weights(psi.ncols(), extra, seed)?;
    let theta = weight_matrix(&weights, psi.ncols());
    let points = theta.dot(&psi.t());
    Ok(HullCloud {
        cloud: PointCloud::new(points)?,
        weights,
        p: psi.ncols(),
        k_n: max_column_norm(psi),
        embedded: false,
    })
}

/// Same surrogate stored through the isometry θ ↦ Lᵀθ with LLᵀ = ψᵀψ/n, so
/// every distance costs O(p) instead of O(n). Falls back to the raw
/// coordinates when ψᵀψ/n is singular.
pub fn l1_hull_cloud_embedded(psi: ArrayView2<f64>, extra: usize, seed: u64) -> Result<HullCloud> {
    let n = psi.nrows();
    let gram = psi.t().dot(&psi) / n as f64;
    let Some(l) = linalg::cholesky(gram.view()) else {
        return l1_hull_cloud(psi, extra, seed);
    };
    let weights = hull_weights(psi.ncols(), extra, seed)?;
    let theta = weight_matrix(&weights, psi.ncols());
    Ok(HullCloud {
        cloud: PointCloud::embedded(theta.dot(&l), n)?,
        weights,
        p: psi.ncols(),
        k_n: max_column_norm(psi),
        embedded: true,
    })
}

fn max_column_norm(psi: ArrayView2<f64>) -> f64 {
    linalg::column_norms_n(psi).into_iter().fold(0.0, f64::max)
}

fn weight_matrix(weights: &[Vec<f64>], p: usize) -> Array2<f64> {
    let mut theta = Array2::zeros((weights.len(), p));
    for (k, w) in weights.iter().enumerate() {
        for (j, &v) in w.iter().enumerate() {
            theta[[k, j]] = v;
        }
    }
    theta
}

fn hull_weights(p: usize, extra: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if p == 0 {
        return Err(Error::invalid("the hull needs at least one column"));
    }
    let mut out = Vec::with_capacity(1 + 2 * p + extra);
    out.push(vec![0.0; p]);
    for j in 0..p {
        for sign in [1.0, -1.0] {
            let mut w = vec![0.0; p];
            w[j] = sign;
            out.push(w);
        }
    }
    let max_level = (usize::BITS - p.leading_zeros()) as u32;
    let mut rng = replication_rng(seed, 0);
    for _ in 0..extra {
        let k = 1usize << rng.random_range(0..=max_level);
        let mut w = vec![0.0; p];
        for _ in 0..k {
            let j = rng.random_range(0..p);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            w[j] += sign / k as f64;
        }
        out.push(w);
    }
    Ok(out)
}

impl HullCloud {
    /// max over points of ‖ψθ − v‖_n and of (‖θ‖₁ − 1)⁺, from the stored
    /// weights; both are zero up to rounding for a valid surrogate.
    pub fn membership_error(&self, psi: ArrayView2<f64>) -> Result<(f64, f64)> {
        if self.embedded {
            let gram = psi.t().dot(&psi) / psi.nrows() as f64;
            let l = linalg::cholesky(gram.view())
                .ok_or(Error::SingularCovariance { min_eigenvalue: 0.0 })?;
            let rebuilt = weight_matrix(&self.weights, self.p).dot(&l);
            return Ok(self.compare(&rebuilt));
        }
        let rebuilt = weight_matrix(&self.weights, self.p).dot(&psi.t());
        Ok(self.compare(&rebuilt))
    }

    fn compare(&self, rebuilt: &Array2<f64>) -> (f64, f64) {
        let scale = self.cloud.scale();
        let mut recon = 0.0f64;
        for (k, row) in rebuilt.rows().into_iter().enumerate() {
            let d2: f64 = row
                .iter()
                .zip(self.cloud.point(k).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            recon = recon.max(d2.sqrt() / scale);
        }
        let excess = self
            .weights
            .iter()
            .map(|w| linalg::l1_norm(w) - 1.0)
            .fold(0.0, f64::max);
        (recon, excess)
    }

    /// sup over the surrogate of θ ↦ ⟨a, θ⟩ for a linear functional given in
    /// θ-coordinates.
    pub fn functional_sup(&self, a: &[f64]) -> f64 {
        self.weights
            .iter()
            .map(|w| linalg::dot(w, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Monte Carlo E sup_v X_v with X_v = Σ_i v_i ξ_i / n, ξ standard Gaussian.
/// For an embedded cloud the same joint law is obtained from p Gaussians.
pub fn gaussian_sup_mc(cloud: &PointCloud, reps: usize, seed: u64) -> Result<ProcessEstimate> {
    if reps < 100 {
        return Err(Error::invalid("gaussian_sup_mc needs at least 100 replications"));
    }
    let coords = cloud.coords();
    let d = coords.ncols();
    let factor = 1.0 / (cloud.scale() * (cloud.n() as f64).sqrt());
    let samples = map_replications(reps, |r| {
        let mut rng = replication_rng(seed, r as u64);
        let mut g = vec![0.0; d];
        fill_gaussian(&mut rng, &mut g);
        let g = ndarray::Array1::from(g);
        coords
            .dot(&g)
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            * factor
    });
    ProcessEstimate::from_samples(
        &samples,
        seed,
        Multiplier::Gaussian,
        SearchMethod::DualNormExact,
        false,
    )
}

/// √(2 log(2p)/n) K_n with K_n = max_j ‖ψ_j‖_n.
pub fn dual_norm_gamma2_bound(psi: ArrayView2<f64>) -> f64 {
    hoeffding_bound(psi.ncols(), psi.nrows(), max_column_norm(psi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub p: usize,
    pub s: usize,
    pub cover_size: usize,
    /// log(2 N_s) from the greedy cover at radius 2^{−s} R_n.
    pub log_cover: f64,
    /// 2^{2s} log(4p).
    pub bound: f64,
    pub ratio: f64,
    /// log(2 N_s) exceeds the bound at s + 1, i.e. more than greedy's
    /// factor-2 radius slack explains.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub rows: Vec<EntropyRow>,
    pub max_ratio: f64,
    pub any_flagged: bool,
}

/// Compares greedy cover entropies of ℓ1-hull surrogates with
/// log(2 N_s) ≤ 2^{2s} log(4p) for s = 0..=max_s.
pub fn entropy_bound_check(clouds: &[&HullCloud], max_s: usize) -> EntropyReport {
    let mut rows = Vec::new();
    for hc in clouds {
        let fp = FarthestPointOrder::new(&hc.cloud);
        let r = hc.cloud.radius();
        let l4p = (4.0 * hc.p as f64).ln();
        for s in 0..=max_s {
            let cover_size = fp.size_at(r * 0.5f64.powi(s as i32));
            let log_cover = (2.0 * cover_size as f64).ln();
            let bound = 4f64.powi(s as i32) * l4p;
            rows.push(EntropyRow {
                p: hc.p,
                s,
                cover_size,
                log_cover,
                bound,
                ratio: log_cover / bound,
                flagged: log_cover > 4.0 * bound,
            });
        }
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let any_flagged = rows.iter().any(|r| r.flagged);
    EntropyReport {
        rows,
        max_ratio,
        any_flagged,
    }
}
