use serde::{Deserialize, Serialize};

use super::margin::ConjugateSpec;
use crate::error::{Error, Result};

/// Right-hand sides of the two oracle bounds and the cone constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBounds {
    /// L = (λ + λ₀)/(λ − λ₀).
    pub cone: f64,
    /// L_δ = 2((1 + δ)/δ)·L.
    pub wide_cone: f64,
    /// H(2λΓ(L,S₀)/δ) ∨ 2λ².
    pub margin_term: f64,
    /// δ·H(2λΓ(L,S₀)/δ) ∨ 2λ².
    pub sparse_rhs: f64,
    /// 2δ·H(4(1+δ)λΓ(L_δ,S*)/δ²) ∨ 2λ² + (1+δ)·E(θ*;θ₀).
    pub approx_rhs: f64,
}

fn check_domain(lambda: f64, lambda0: f64, delta: f64) -> Result<()> {
    if !(lambda0 > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("the bounds need finite λ and λ₀ > 0"));
    }
    if !(lambda > lambda0) {
        return Err(Error::DegenerateGap { lambda, lambda0 });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("δ must lie in (0, 1)"));
    }
    Ok(())
}

/// H at v, with H(∞) = ∞ so that an infinite Γ propagates.
fn h_at(h: &ConjugateSpec, v: f64) -> Result<f64> {
    if v.is_infinite() {
        return Ok(f64::INFINITY);
    }
    h.eval(v)
}

pub fn cone_constants(lambda: f64, lambda0: f64, delta: f64) -> Result<(f64, f64)> {
    check_domain(lambda, lambda0, delta)?;
    let l = (lambda + lambda0) / (lambda - lambda0);
    Ok((l, 2.0 * ((1.0 + delta) / delta) * l))
}

/// Both oracle bounds. `gamma_cone` is Γ(L,S₀), `gamma_wide_cone` is Γ(L_δ,S*)
/// and `excess_star` is E(θ*;θ₀).
pub fn oracle_bounds(
    lambda: f64,
    lambda0: f64,
    delta: f64,
    gamma_cone: f64,
    gamma_wide_cone: f64,
    h: &ConjugateSpec,
    excess_star: f64,
) -> Result<OracleBounds> {
    let (l, wide_cone) = cone_constants(lambda, lambda0, delta)?;
    if !(gamma_cone >= 0.0) || !(gamma_wide_cone >= 0.0) || !(excess_star >= 0.0) {
        return Err(Error::invalid("Γ and the excess risk must be nonnegative"));
    }
    let floor = 2.0 * lambda * lambda;
    let h1 = h_at(h, 2.0 * lambda * gamma_cone / delta)?;
    let h2 = h_at(h, 4.0 * (1.0 + delta) * lambda * gamma_wide_cone / (delta * delta))?;
    Ok(OracleBounds {
        cone: l,
        wide_cone,
        margin_term: h1.max(floor),
        sparse_rhs: (delta * h1).max(floor),
        approx_rhs: (2.0 * delta * h2).max(floor) + (1.0 + delta) * excess_star,
    })
}

/// (M₀, M*) of the ℓ1-error bounds.
pub fn l1_error_radii(
    lambda: f64,
    lambda0: f64,
    delta: f64,
    gamma_cone: f64,
    gamma_wide_cone: f64,
    h: &ConjugateSpec,
    excess_star: f64,
) -> Result<(f64, f64)> {
    check_domain(lambda, lambda0, delta)?;
    let gap = lambda - lambda0;
    let floor = 2.0 * lambda * lambda;
    let h1 = h_at(h, 2.0 * lambda * gamma_cone / delta)?;
    let h2 = h_at(h, 4.0 * (1.0 + delta) * lambda * gamma_wide_cone / (delta * delta))?;
    let m0 = delta / gap * h1.max(floor);
    let m_star = ((2.0 * delta * h2).max(floor) + (1.0 + delta) * excess_star) / gap;
    Ok((m0, m_star))
}
