use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::margin::TauNorm;
use crate::error::{Error, Result};
use crate::linalg;

/// Largest support accepted by the sign enumeration.
pub const MAX_SUPPORT: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSparsity {
    /// δ(L,S) = min τ(θ) over ‖θ_S‖₁ = 1, ‖θ_{S^c}‖₁ ≤ L.
    pub delta: f64,
    /// Γ(L,S) = 1/δ(L,S), infinite when δ vanishes.
    pub gamma: f64,
    /// φ²(L,S) = |S| δ².
    pub phi2: f64,
    pub minimizer: Vec<f64>,
}

/// δ, Γ and φ² by enumerating the sign pattern of θ_S: for a fixed pattern
/// the feasible set is a simplex face times an ℓ1 ball and τ² is a convex
/// quadratic, minimized by accelerated projected gradient. Patterns σ and
/// −σ give the same value, so the first sign is fixed.
pub fn effective_sparsity(tau: &TauNorm, l: f64, support: &[usize]) -> Result<EffectiveSparsity> {
    let p = tau.dim();
    if support.is_empty() {
        return Err(Error::invalid("the support set must be nonempty"));
    }
    if support.len() > MAX_SUPPORT {
        return Err(Error::TooLarge {
            what: "sign enumeration support".into(),
            size: support.len(),
            limit: MAX_SUPPORT,
        });
    }
    if !(l >= 0.0) || !l.is_finite() {
        return Err(Error::invalid("L must be finite and nonnegative"));
    }
    let mut in_s = vec![false; p];
    for &j in support {
        if j >= p || in_s[j] {
            return Err(Error::invalid("support indices must be distinct and < p"));
        }
        in_s[j] = true;
    }
    let gram = tau.gram();
    // power iteration may undershoot slightly, hence the safety factor
    let lipschitz = 2.02 * linalg::spectral_norm_sq(gram.view()).sqrt();
    let s = support.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for pattern in 0..(1usize << (s - 1)) {
        let signs: Vec<f64> = (0..s)
            .map(|k| if k > 0 && pattern & (1 << (k - 1)) != 0 { -1.0 } else { 1.0 })
            .collect();
        let (value, theta) = minimize_pattern(&gram, lipschitz, l, support, &in_s, &signs);
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, theta));
        }
    }
    let (sq, minimizer) = best.expect("at least one pattern");
    let delta = sq.max(0.0).sqrt();
    let gamma = if delta <= 1e-12 { f64::INFINITY } else { 1.0 / delta };
    Ok(EffectiveSparsity {
        delta,
        gamma,
        phi2: s as f64 * delta * delta,
        minimizer,
    })
}

fn quad(gram: &Array2<f64>, theta: &[f64], grad: &mut [f64]) -> f64 {
    let g = gram.dot(&ArrayView1::from(theta));
    for (o, v) in grad.iter_mut().zip(g.iter()) {
        *o = 2.0 * v;
    }
    linalg::dot(theta, g.as_slice().expect("contiguous"))
}

fn project(
    v: &[f64],
    l: f64,
    support: &[usize],
    in_s: &[bool],
    signs: &[f64],
    out: &mut [f64],
) {
    let s = support.len();
    let oriented: Vec<f64> = support.iter().zip(signs).map(|(&j, sg)| v[j] * sg).collect();
    let mut face = vec![0.0; s];
    linalg::project_capped_simplex(&oriented, &vec![0.0; s], &vec![1.0; s], 1.0, &mut face);
    for (k, &j) in support.iter().enumerate() {
        out[j] = face[k] * signs[k];
    }
    let rest: Vec<usize> = (0..v.len()).filter(|&j| !in_s[j]).collect();
    if rest.is_empty() {
        return;
    }
    let vr: Vec<f64> = rest.iter().map(|&j| v[j]).collect();
    let mut pr = vec![0.0; rest.len()];
    linalg::project_l1_ball_box(&vr, &vec![0.0; rest.len()], l, None, None, &mut pr);
    for (k, &j) in rest.iter().enumerate() {
        out[j] = pr[k];
    }
}

/// Frank-Wolfe gap max_s ⟨∇f(x), x − s⟩ over the feasible set, an upper
/// bound on f(x) − min f.
fn dual_gap(x: &[f64], grad: &[f64], l: f64, support: &[usize], in_s: &[bool], signs: &[f64]) -> f64 {
    // best face vertex: the oriented coordinate with the smallest slope
    let face = support
        .iter()
        .zip(signs)
        .map(|(&j, sg)| sg * grad[j])
        .fold(f64::INFINITY, f64::min);
    let rest = (0..x.len())
        .filter(|&j| !in_s[j])
        .map(|j| grad[j].abs())
        .fold(0.0, f64::max);
    linalg::dot(x, grad) - face + l * rest
}

fn minimize_pattern(
    gram: &Array2<f64>,
    lipschitz: f64,
    l: f64,
    support: &[usize],
    in_s: &[bool],
    signs: &[f64],
) -> (f64, Vec<f64>) {
    let p = in_s.len();
    let mut x = vec![0.0; p];
    for (k, &j) in support.iter().enumerate() {
        x[j] = signs[k] / support.len() as f64;
    }
    if lipschitz == 0.0 {
        return (0.0, x);
    }
    let step = 1.0 / lipschitz;
    let mut y = x.clone();
    let mut grad = vec![0.0; p];
    let mut next = vec![0.0; p];
    let mut trial = vec![0.0; p];
    let mut t = 1.0f64;
    let mut fx = quad(gram, &x, &mut grad);
    for _ in 0..200_000 {
        quad(gram, &y, &mut grad);
        for j in 0..p {
            trial[j] = y[j] - step * grad[j];
        }
        project(&trial, l, support, in_s, signs, &mut next);
        let fnext = quad(gram, &next, &mut grad);
        if fnext > fx {
            if t == 1.0 {
                // a plain projected step from x no longer descends
                break;
            }
            // restart the momentum from the last iterate
            y.copy_from_slice(&x);
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let mut moved = 0.0f64;
        for j in 0..p {
            moved = moved.max((next[j] - x[j]).abs());
            y[j] = next[j] + beta * (next[j] - x[j]);
        }
        x.copy_from_slice(&next);
        fx = fnext;
        t = t_next;
        // grad already holds ∇f(x) from the evaluation of fnext
        if moved == 0.0 || dual_gap(&x, &grad, l, support, in_s, signs) <= 1e-11 * fx + 1e-28 {
            break;
        }
    }
    (fx, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::gaussian_design;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn euclidean_closed_forms() {
        for s in [1usize, 2, 4, 8] {
            for l in [0.0, 1.0, 3.0, 10.0] {
                let tau = TauNorm::Euclidean { dim: 12 };
                let support: Vec<usize> = (0..s).collect();
                let e = effective_sparsity(&tau, l, &support).unwrap();
                assert_relative_eq!(e.gamma, (s as f64).sqrt(), epsilon = 1e-6);
                assert_relative_eq!(e.phi2, 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn diagonal_weight_example() {
        let tau = TauNorm::Weighted {
            root: array![[2.0, 0.0], [0.0, 1.0]],
        };
        let e = effective_sparsity(&tau, 3.0, &[0]).unwrap();
        assert_relative_eq!(e.delta, 2.0, epsilon = 1e-6);
        assert_relative_eq!(e.gamma, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn grid_oracle_on_a_correlated_pair() {
        // τ(θ)² = θ₁² + θ₂² + 1.6 θ₁θ₂, S = {0}, L = 0.5
        let root = array![[1.0, 0.8], [0.0, 0.6]];
        let tau = TauNorm::Weighted { root: root.clone() };
        let e = effective_sparsity(&tau, 0.5, &[0]).unwrap();
        let mut best = f64::INFINITY;
        for k in 0..=200_000 {
            let t2 = -0.5 + k as f64 * 1.0 / 200_000.0;
            let v = root.dot(&array![1.0, t2]);
            best = best.min(v.dot(&v).sqrt());
        }
        assert_relative_eq!(e.delta, best, epsilon = 1e-8);
    }

    #[test]
    fn degenerate_norm_gives_infinite_gamma() {
        let tau = TauNorm::Weighted {
            root: array![[1.0, 1.0]],
        };
        let e = effective_sparsity(&tau, 1.0, &[0]).unwrap();
        assert!(e.gamma.is_infinite());
    }

    #[test]
    fn argument_checks() {
        let tau = TauNorm::Euclidean { dim: 20 };
        assert!(effective_sparsity(&tau, 1.0, &[]).is_err());
        let big: Vec<usize> = (0..13).collect();
        assert!(matches!(
            effective_sparsity(&tau, 1.0, &big),
            Err(Error::TooLarge { .. })
        ));
        assert!(effective_sparsity(&tau, -1.0, &[0]).is_err());
        assert!(effective_sparsity(&tau, 1.0, &[0, 0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn gamma_grows_with_l(seed in 0u64..1000, l in 0.0f64..5.0, dl in 0.0f64..5.0) {
            let z = gaussian_design(30, 8, seed, true);
            let tau = TauNorm::Design { z };
            let a = effective_sparsity(&tau, l, &[0, 3]).unwrap();
            let b = effective_sparsity(&tau, l + dl, &[0, 3]).unwrap();
            let base = effective_sparsity(&tau, 0.0, &[0, 3]).unwrap();
            prop_assert!(b.gamma >= a.gamma * (1.0 - 1e-7));
            prop_assert!(a.gamma >= base.gamma * (1.0 - 1e-7));
        }
    }
}
