//! Closed-form expectation and tail bounds.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Linear,
    Glm,
    ExtendedGlm,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailKind {
    Massart,
    Bernstein,
    Symmetrization,
    Peeling,
    FixedM,
}

/// A tail threshold together with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub kind: TailKind,
    pub t: f64,
    pub n: usize,
    pub p: usize,
    pub value: f64,
}

/// √(2 log(2p)/n) · K_n.
pub fn hoeffding_bound(p: usize, n: usize, k_n: f64) -> f64 {
    (2.0 * (2.0 * p as f64).ln() / n as f64).sqrt() * k_n
}

/// Inputs of [`regime_bound`] beyond (p, n, K_n, M).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeInputs {
    /// Number of linear predictors (extended GLM).
    pub components: usize,
    /// Λ̄_n / Λ_n (non-linear).
    pub eigen_ratio: Option<f64>,
    /// Universal constant, reported as "up to universal constant".
    pub constant: f64,
}

impl Default for RegimeInputs {
    fn default() -> Self {
        Self {
            components: 1,
            eigen_ratio: None,
            constant: 1.0,
        }
    }
}

/// Factor multiplying the linear bound in each regime.
pub fn regime_factor(regime: Regime, inputs: &RegimeInputs) -> Result<f64> {
    match regime {
        Regime::Linear => Ok(1.0),
        Regime::Glm => Ok(2.0),
        Regime::ExtendedGlm => {
            if inputs.components == 0 {
                return Err(Error::invalid("extended GLM needs at least one component"));
            }
            Ok(inputs.constant * 2f64.powi(inputs.components as i32 - 1))
        }
        Regime::Nonlinear => match inputs.eigen_ratio {
            Some(r) if r.is_finite() && r >= 1.0 => Ok(inputs.constant * r),
            Some(_) => Err(Error::SingularCovariance { min_eigenvalue: 0.0 }),
            None => Err(Error::invalid("non-linear regime needs the eigenvalue ratio")),
        },
    }
}

/// M·√(2 log(2p)/n)·K_n times the regime factor.
pub fn regime_bound(
    regime: Regime,
    p: usize,
    n: usize,
    k_n: f64,
    radius: f64,
    inputs: &RegimeInputs,
) -> Result<f64> {
    if p == 0 || n == 0 {
        return Err(Error::invalid("p and n must be positive"));
    }
    Ok(radius * hoeffding_bound(p, n, k_n) * regime_factor(regime, inputs)?)
}

/// Λ̄_n / Λ_n from Σ_n = ψᵀψ/n, failing when Σ_n is singular.
pub fn eigen_ratio(psi: ArrayView2<f64>) -> Result<f64> {
    let n = psi.nrows() as f64;
    let sigma = psi.t().dot(&psi) / n;
    let eig = linalg::symmetric_eigenvalues(sigma.view());
    let lo = eig.first().copied().unwrap_or(0.0);
    let hi = eig.last().copied().unwrap_or(0.0);
    if !(lo > 1e-12 * hi.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularCovariance { min_eigenvalue: lo });
    }
    Ok((hi / lo).sqrt())
}

/// E_n + R_n √(2t/n).
pub fn massart_threshold(e_n: f64, r_n: f64, n: usize, t: f64) -> f64 {
    e_n + r_n * (2.0 * t / n as f64).sqrt()
}

/// 2τL √(2(t + log p)/n) + 2L(t + log p)/n.
pub fn bernstein_envelope_tail(l: f64, tau: f64, p: usize, n: usize, t: f64) -> f64 {
    let u = t + (p as f64).ln();
    let n = n as f64;
    2.0 * tau * l * (2.0 * u / n).sqrt() + 2.0 * l * u / n
}

/// τ for ψ_j(X_i) ~ N(0, s²): τ² = 2L²[(1 − 2s²/L²)^{−1/2} − 1], needs s² < L²/2.
pub fn gaussian_subgaussian_tau(s: f64, l: f64) -> Result<f64> {
    let q = 2.0 * s * s / (l * l);
    if q >= 1.0 {
        return Err(Error::invalid("sub-Gaussian scale too small for the variance"));
    }
    Ok((2.0 * l * l * ((1.0 - q).powf(-0.5) - 1.0)).sqrt())
}

/// λ*(1 + K*[√((t + log p)/log p) + (t + log p)/n]) for the uniform ratio.
pub fn peeling_threshold(lambda_star: f64, k_star: f64, p: usize, n: usize, t: f64) -> f64 {
    let lp = (p as f64).ln();
    let u = t + lp;
    lambda_star * (1.0 + k_star * ((u / lp).sqrt() + u / n as f64))
}

/// (λ* M / e)(1 + K*[√(t/log p) + t/n]) for a single radius M.
pub fn fixed_m_threshold(
    lambda_star: f64,
    k_star: f64,
    radius: f64,
    p: usize,
    n: usize,
    t: f64,
) -> f64 {
    let lp = (p as f64).ln();
    lambda_star * radius / std::f64::consts::E
        * (1.0 + k_star * ((t / lp).sqrt() + t / n as f64))
}

/// (λ*, K*) implied by the symmetrization corollary with Ē = λ₀M K̄ and
/// R̄ = M K̄: sup|Y| ≤ 8λ₀K̄M + 4K̄M√(2t/n), rewritten in the fixed-M form.
pub fn peeling_constants(lambda0: f64, k_bar: f64, p: usize, n: usize) -> (f64, f64) {
    let e = std::f64::consts::E;
    let lambda_star = 8.0 * e * lambda0 * k_bar;
    let k_star = 4.0 * e * k_bar * (2.0 * (p as f64).ln() / n as f64).sqrt() / lambda_star;
    (lambda_star, k_star)
}

/// Number of shells used by the peeling device: j = 0..J with J = max(p, 64).
pub fn peeling_shells(p: usize) -> usize {
    p.max(64)
}
