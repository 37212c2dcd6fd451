//! Monte Carlo estimates of conditional expectations and empirical checks
//! of the symmetrization, contraction and tail inequalities.

use ndarray::ArrayView2;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::bounds::{bernstein_envelope_tail, massart_threshold, peeling_shells, peeling_threshold, TailKind};
use super::process::{BallSpec, IncrementProcess, LinearProcess, ProcessGenerator};
use super::search::{dual_norm_sup, process_sup, sup_ratio, symmetrized_sup_once, SearchConfig};
use crate::error::{check_len, Error, Result};
use crate::rng::{fill_gaussian, fill_rademacher, map_replications, replication_rng};
use crate::stats::{binomial_se, mean_and_se, Multiplier, ProcessEstimate, SearchMethod};

/// Shells searched per replication when the class is not linear.
pub const NONLINEAR_SHELLS: usize = 16;

fn search_method(lower: bool) -> SearchMethod {
    if lower {
        SearchMethod::VertexRandomDirection
    } else {
        SearchMethod::DualNormExact
    }
}

/// E_n: Monte Carlo mean over Rademacher draws of the symmetrized supremum.
pub fn conditional_mean_en<P: IncrementProcess + ?Sized>(
    process: &P,
    ball: &BallSpec,
    reps: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<ProcessEstimate> {
    let n = process.n();
    let runs = map_replications(reps, |r| {
        let mut rng = replication_rng(seed, r as u64);
        let mut eps = vec![0.0; n];
        fill_rademacher(&mut rng, &mut eps);
        symmetrized_sup_once(process, ball, &eps, search, rng.next_u64())
    });
    let mut samples = Vec::with_capacity(reps);
    let mut lower = false;
    for r in runs {
        let r = r?;
        lower |= r.lower_estimate;
        samples.push(r.value);
    }
    ProcessEstimate::from_samples(&samples, seed, Multiplier::Rademacher, search_method(lower), lower)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizationReport {
    pub t: f64,
    pub reps: usize,
    /// Frequency of sup|Y| > 4R√(2t/n).
    pub lhs_freq: f64,
    /// Frequency of sup|Y^ε| > R√(2t/n).
    pub rhs_freq: f64,
    pub rhs_times_4: f64,
    pub se: f64,
    pub verdict: bool,
}

/// Compares both sides of the symmetrization lemma on fresh samples.
pub fn symmetrization_check<G: ProcessGenerator>(
    generator: &G,
    ball: &BallSpec,
    t: f64,
    reps: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<SymmetrizationReport> {
    if t < 4.0 {
        return Err(Error::invalid("the symmetrization lemma needs t >= 4"));
    }
    if reps < 2 {
        return Err(Error::invalid("at least 2 replications are needed"));
    }
    let radius = generator.population_radius(ball);
    let runs = map_replications(reps, |r| -> Result<(bool, bool)> {
        let mut rng = replication_rng(seed, r as u64);
        let process = generator.generate(&mut rng)?;
        let n = process.n();
        let level = radius * (2.0 * t / n as f64).sqrt();
        let w = vec![1.0 / n as f64; n];
        let y = process_sup(&process, &w, ball, search, rng.next_u64())?;
        let mut eps = vec![0.0; n];
        fill_rademacher(&mut rng, &mut eps);
        let ye = symmetrized_sup_once(&process, ball, &eps, search, rng.next_u64())?;
        Ok((y.value > 4.0 * level, ye.value > level))
    });
    let mut lhs = 0usize;
    let mut rhs = 0usize;
    for r in runs {
        let (a, b) = r?;
        lhs += a as usize;
        rhs += b as usize;
    }
    let lhs_freq = lhs as f64 / reps as f64;
    let rhs_freq = rhs as f64 / reps as f64;
    let se = (binomial_se(lhs_freq, reps).powi(2) + 16.0 * binomial_se(rhs_freq, reps).powi(2)).sqrt();
    Ok(SymmetrizationReport {
        t,
        reps,
        lhs_freq,
        rhs_freq,
        rhs_times_4: 4.0 * rhs_freq,
        se,
        verdict: lhs_freq <= 4.0 * rhs_freq + 3.0 * se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub contracted: ProcessEstimate,
    pub linear: ProcessEstimate,
    /// E_n(contracted)/E_n(linear); `None` when the linear mean is within
    /// three standard errors of zero.
    pub ratio: Option<f64>,
    pub ratio_se: Option<f64>,
    /// ratio ≤ bound + 3·SE, when the ratio is defined.
    pub verdict: Option<bool>,
}

fn paired_ratio(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ma, _) = mean_and_se(a);
    let (mb, _) = mean_and_se(b);
    let r = ma / mb;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - r * y).collect();
    let (_, se_d) = mean_and_se(&d);
    (r, se_d / mb.abs())
}

fn ratio_report(
    a: Vec<f64>,
    b: Vec<f64>,
    a_meta: (Multiplier, bool),
    b_meta: (Multiplier, bool),
    seed: u64,
    bound: f64,
) -> Result<ContractionReport> {
    let contracted =
        ProcessEstimate::from_samples(&a, seed, a_meta.0, search_method(a_meta.1), a_meta.1)?;
    let linear = ProcessEstimate::from_samples(&b, seed, b_meta.0, search_method(b_meta.1), b_meta.1)?;
    if !(linear.mean > 3.0 * linear.std_error) || linear.mean <= 0.0 {
        return Ok(ContractionReport {
            contracted,
            linear,
            ratio: None,
            ratio_se: None,
            verdict: None,
        });
    }
    let (ratio, se) = paired_ratio(&a, &b);
    Ok(ContractionReport {
        contracted,
        linear,
        ratio: Some(ratio),
        ratio_se: Some(se),
        verdict: Some(ratio <= bound + 3.0 * se),
    })
}

/// E_n of a Lipschitz-contracted class against E_n of the dominating linear
/// class, with common Rademacher draws; the contraction inequality says the
/// ratio is at most 2.
pub fn contraction_check<P: IncrementProcess + ?Sized>(
    contracted: &P,
    linear: &LinearProcess,
    ball: &BallSpec,
    reps: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<ContractionReport> {
    check_len("comparison sample size", contracted.n(), linear.n())?;
    let n = contracted.n();
    let runs = map_replications(reps, |r| -> Result<(f64, f64, bool)> {
        let mut rng = replication_rng(seed, r as u64);
        let mut eps = vec![0.0; n];
        fill_rademacher(&mut rng, &mut eps);
        let a = symmetrized_sup_once(contracted, ball, &eps, search, rng.next_u64())?;
        let b = symmetrized_sup_once(linear, ball, &eps, search, 0)?;
        Ok((a.value, b.value, a.lower_estimate))
    });
    let mut a = Vec::with_capacity(reps);
    let mut b = Vec::with_capacity(reps);
    let mut lower = false;
    for r in runs {
        let (x, y, l) = r?;
        a.push(x);
        b.push(y);
        lower |= l;
    }
    ratio_report(a, b, (Multiplier::Rademacher, lower), (Multiplier::Rademacher, false), seed, 2.0)
}

/// Block index of each column for block sizes p_1..p_r.
fn block_index(blocks: &[usize]) -> Vec<usize> {
    blocks
        .iter()
        .enumerate()
        .flat_map(|(k, &pk)| std::iter::repeat_n(k, pk))
        .collect()
}

/// Coefficients of X(θ, θ*) = (1/n) Σ_i Σ_k ξ_ik Σ_{j∈k} ψ_jk(X_i)(θ_j − θ*_j)
/// for Gaussian multipliers ξ (n × r, row-major).
pub fn comparison_coefficients(psi: ArrayView2<f64>, blocks: &[usize], xi: &[f64]) -> Result<Vec<f64>> {
    let q: usize = blocks.iter().sum();
    check_len("block envelope columns", q, psi.ncols())?;
    let (n, r) = (psi.nrows(), blocks.len());
    check_len("multipliers", n * r, xi.len())?;
    let idx = block_index(blocks);
    let mut v = vec![0.0; q];
    for i in 0..n {
        for j in 0..q {
            v[j] += xi[i * r + idx[j]] * psi[[i, j]];
        }
    }
    v.iter_mut().for_each(|x| *x /= n as f64);
    Ok(v)
}

/// X(θ, θ*) at a given displacement θ − θ*.
pub fn comparison_value(psi: ArrayView2<f64>, blocks: &[usize], xi: &[f64], delta: &[f64]) -> Result<f64> {
    let v = comparison_coefficients(psi, blocks, xi)?;
    check_len("displacement", v.len(), delta.len())?;
    Ok(v.iter().zip(delta).map(|(a, b)| a * b).sum())
}

/// Ratio E sup|Y^ε| / E sup X for an extended-GLM class, with X built from
/// the signed block envelope. Only the first Σp_k coordinates (the
/// coefficient blocks) of the ball move; both suprema use the same ball.
pub fn multivariate_contraction_check<P: IncrementProcess + ?Sized>(
    process: &P,
    block_envelope: ArrayView2<f64>,
    blocks: &[usize],
    ball: &BallSpec,
    reps: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<ContractionReport> {
    let n = process.n();
    check_len("block envelope rows", n, block_envelope.nrows())?;
    let r = blocks.len();
    let runs = map_replications(reps, |rep| -> Result<(f64, f64, bool)> {
        let mut rng = replication_rng(seed, rep as u64);
        let mut eps = vec![0.0; n];
        fill_rademacher(&mut rng, &mut eps);
        let y = symmetrized_sup_once(process, ball, &eps, search, rng.next_u64())?;
        let mut xi = vec![0.0; n * r];
        fill_gaussian(&mut rng, &mut xi);
        let v = comparison_coefficients(block_envelope, blocks, &xi)?;
        let (x, _) = dual_norm_sup(&v, ball.radius);
        Ok((y.value, x, y.lower_estimate))
    });
    let mut a = Vec::with_capacity(reps);
    let mut b = Vec::with_capacity(reps);
    let mut lower = false;
    for run in runs {
        let (x, y, l) = run?;
        a.push(x);
        b.push(y);
        lower |= l;
    }
    let bound = 2f64.powi(r as i32 - 1);
    ratio_report(a, b, (Multiplier::Rademacher, lower), (Multiplier::Gaussian, false), seed, bound)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCheckReport {
    pub kind: TailKind,
    pub t: f64,
    pub reps: usize,
    pub frequency: f64,
    pub se: f64,
    /// multiple·e^{−t}.
    pub allowed: f64,
    pub verdict: bool,
    /// Set when suprema came from a non-exhaustive search.
    pub lower_estimate: bool,
}

fn tail_report(kind: TailKind, t: f64, hits: usize, reps: usize, multiple: f64, lower: bool) -> TailCheckReport {
    let frequency = hits as f64 / reps as f64;
    let se = binomial_se(frequency, reps);
    let allowed = multiple * (-t).exp();
    TailCheckReport {
        kind,
        t,
        reps,
        frequency,
        se,
        allowed,
        verdict: frequency <= allowed + 3.0 * se,
        lower_estimate: lower,
    }
}

/// Frequency of sup|Y^ε| ≥ E_n + R_n√(2t/n) over fresh Rademacher draws,
/// with E_n supplied (estimated independently) and R_n from the process.
pub fn massart_check<P: IncrementProcess + ?Sized>(
    process: &P,
    ball: &BallSpec,
    e_n: f64,
    t: f64,
    reps: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<TailCheckReport> {
    let r_n = process.radius_bound(ball);
    if !r_n.is_finite() {
        return Err(Error::invalid("process radius is unknown; attach an envelope"));
    }
    let level = massart_threshold(e_n, r_n, process.n(), t);
    let n = process.n();
    let runs = map_replications(reps, |r| -> Result<(bool, bool)> {
        let mut rng = replication_rng(seed, r as u64);
        let mut eps = vec![0.0; n];
        fill_rademacher(&mut rng, &mut eps);
        let s = symmetrized_sup_once(process, ball, &eps, search, rng.next_u64())?;
        Ok((s.value >= level, s.lower_estimate))
    });
    let mut hits = 0;
    let mut lower = false;
    for r in runs {
        let (h, l) = r?;
        hits += h as usize;
        lower |= l;
    }
    Ok(tail_report(TailKind::Massart, t, hits, reps, 1.0, lower))
}

/// Frequency of max_j |‖ψ_j‖_n² − ‖ψ_j‖²| ≥ the Bernstein level for
/// ψ_j(X_i) i.i.d. N(0, s²), with sub-Gaussian constants (L, τ).
#[allow(clippy::too_many_arguments)]
pub fn bernstein_check(
    n: usize,
    p: usize,
    s: f64,
    l: f64,
    tau: f64,
    t: f64,
    reps: usize,
    seed: u64,
) -> TailCheckReport {
    let level = bernstein_envelope_tail(l, tau, p, n, t);
    let hits: usize = map_replications(reps, |r| {
        let mut rng = replication_rng(seed, r as u64);
        let mut col = vec![0.0; n];
        let mut worst: f64 = 0.0;
        for _ in 0..p {
            fill_gaussian(&mut rng, &mut col);
            let sq = col.iter().map(|x| x * x).sum::<f64>() * s * s / n as f64;
            worst = worst.max((sq - s * s).abs());
        }
        (worst >= level) as usize
    })
    .into_iter()
    .sum();
    tail_report(TailKind::Bernstein, t, hits, reps, 2.0, false)
}

/// Frequency of the uniform-ratio event
/// sup |Y(θ,θ*)| / (‖θ − θ*‖₁ ∨ e^{−(J−1)}M̄) ≥ peeling threshold on fresh
/// samples, J = max(p, 64).
#[allow(clippy::too_many_arguments)]
pub fn peeling_check<G: ProcessGenerator>(
    generator: &G,
    ball: &BallSpec,
    lambda_star: f64,
    k_star: f64,
    t: f64,
    reps: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<TailCheckReport> {
    let p = ball.center.len();
    let shells = peeling_shells(p);
    let floor = (-((shells - 1) as f64)).exp() * ball.radius;
    let runs = map_replications(reps, |r| -> Result<(bool, bool)> {
        let mut rng = replication_rng(seed, r as u64);
        let process = generator.generate(&mut rng)?;
        let n = process.n();
        let w = vec![1.0 / n as f64; n];
        let level = peeling_threshold(lambda_star, k_star, p, n, t);
        let (ratio, lower) = sup_ratio(&process, &w, ball, floor, NONLINEAR_SHELLS, search, rng.next_u64())?;
        Ok((ratio >= level, lower))
    });
    let mut hits = 0;
    let mut lower = false;
    for r in runs {
        let (h, l) = r?;
        hits += h as usize;
        lower |= l;
    }
    Ok(tail_report(TailKind::Peeling, t, hits, reps, 6.0, lower))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emp_process::bounds::hoeffding_bound;
    use crate::emp_process::process::{ConstantLoss, LinearGaussianDesign};
    use crate::linalg;
    use crate::sample::gaussian_design;
    use ndarray::{array, Array2};

    #[test]
    fn zero_envelope_has_zero_mean() {
        let proc = LinearProcess::new(Array2::zeros((10, 3)));
        let ball = BallSpec::origin(3, 1.0).unwrap();
        let est = conditional_mean_en(&proc, &ball, 100, 1, &SearchConfig::default()).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn linear_mean_is_the_dual_norm_average() {
        let z = gaussian_design(30, 4, 2, true);
        let proc = LinearProcess::new(z.clone());
        let ball = BallSpec::origin(4, 1.5).unwrap();
        let est = conditional_mean_en(&proc, &ball, 200, 5, &SearchConfig::default()).unwrap();
        let mut acc = 0.0;
        for r in 0..200u64 {
            let mut rng = replication_rng(5, r);
            let mut eps = vec![0.0; 30];
            fill_rademacher(&mut rng, &mut eps);
            let v = z.t().dot(&ndarray::ArrayView1::from(&eps[..])) / 30.0;
            acc += 1.5 * linalg::linf_norm(v.as_slice().unwrap());
        }
        assert!((est.mean - acc / 200.0).abs() < 1e-12);
        assert!(!est.lower_estimate);
    }

    #[test]
    fn hoeffding_dominates_on_a_seeded_design() {
        let z = gaussian_design(256, 64, 11, true);
        let proc = LinearProcess::new(z);
        let ball = BallSpec::origin(64, 1.0).unwrap();
        let est = conditional_mean_en(&proc, &ball, 300, 3, &SearchConfig::default()).unwrap();
        assert!(est.mean <= hoeffding_bound(64, 256, 1.0));
    }

    #[test]
    fn mean_is_linear_in_the_radius() {
        let proc = LinearProcess::new(gaussian_design(40, 5, 1, true));
        let a = conditional_mean_en(&proc, &BallSpec::origin(5, 1.0).unwrap(), 50, 2, &SearchConfig::default()).unwrap();
        let b = conditional_mean_en(&proc, &BallSpec::origin(5, 2.0).unwrap(), 50, 2, &SearchConfig::default()).unwrap();
        assert!((b.mean - 2.0 * a.mean).abs() <= 1e-14 * b.mean);
    }

    #[test]
    fn constant_loss_never_crosses_thresholds() {
        let ball = BallSpec::origin(3, 1.0).unwrap();
        let rep = symmetrization_check(&ConstantLoss { n: 20, p: 3 }, &ball, 4.0, 50, 0, &SearchConfig::default()).unwrap();
        assert_eq!(rep.lhs_freq, 0.0);
        assert_eq!(rep.rhs_freq, 0.0);
        assert!(rep.verdict);
    }

    #[test]
    fn huge_t_gives_zero_frequencies() {
        let gen = LinearGaussianDesign {
            z: gaussian_design(50, 5, 3, true),
            sigma: 1.0,
        };
        let ball = BallSpec::origin(5, 1.0).unwrap();
        let rep = symmetrization_check(&gen, &ball, 50.0, 200, 4, &SearchConfig::default()).unwrap();
        assert_eq!(rep.lhs_freq, 0.0);
        assert_eq!(rep.rhs_freq, 0.0);
        assert!(rep.verdict);
        assert!(symmetrization_check(&gen, &ball, 3.0, 200, 4, &SearchConfig::default()).is_err());
    }

    #[test]
    fn identical_class_has_unit_ratio() {
        let z = gaussian_design(40, 4, 7, true);
        let proc = LinearProcess::new(z.clone());
        let ball = BallSpec::origin(4, 1.0).unwrap();
        let rep = contraction_check(&proc, &proc, &ball, 100, 1, &SearchConfig::default()).unwrap();
        assert!((rep.ratio.unwrap() - 1.0).abs() < 1e-12);
        let zero = LinearProcess::new(Array2::zeros((40, 4)));
        let rep = contraction_check(&zero, &zero, &ball, 100, 1, &SearchConfig::default()).unwrap();
        assert!(rep.ratio.is_none());
        assert!(rep.verdict.is_none());
    }

    #[test]
    fn duplicated_blocks_double_the_comparison_process() {
        let psi1 = array![[1.0, -0.5], [0.3, 2.0], [-1.2, 0.4]];
        let mut psi2 = Array2::zeros((3, 4));
        for i in 0..3 {
            for j in 0..2 {
                psi2[[i, j]] = psi1[[i, j]];
                psi2[[i, j + 2]] = psi1[[i, j]];
            }
        }
        let xi1 = [0.7, -1.1, 0.2];
        let xi2 = [0.7, 0.7, -1.1, -1.1, 0.2, 0.2];
        let d = [0.25, -0.4];
        let one = comparison_value(psi1.view(), &[2], &xi1, &d).unwrap();
        let two = comparison_value(psi2.view(), &[2, 2], &xi2, &[0.25, -0.4, 0.25, -0.4]).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-15);
    }

    #[test]
    fn bernstein_level_is_rarely_crossed() {
        let tau = crate::emp_process::bounds::gaussian_subgaussian_tau(1.0, 2.0).unwrap();
        let rep = bernstein_check(100, 20, 1.0, 2.0, tau, 3.0, 500, 9);
        assert!(rep.verdict);
    }
}
