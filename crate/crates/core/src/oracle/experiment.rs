use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::bounds::{cone_constants, oracle_bounds, l1_error_radii};
use super::margin::{excess_risk, ConjugateSpec, TauNorm};
use super::sparsity::{effective_sparsity, MAX_SUPPORT};
use crate::emp_process::{
    hoeffding_bound, sup_ratio, BallSpec, IncrementProcess, LinearProcess, ProcessGenerator,
    SearchConfig,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::LossModel;
use crate::rng::{derive_seed, fill_gaussian, map_replications, replication_rng};
use crate::sample::{gaussian_design, Generator, SampleSet};
use crate::solver::{solve, SolverConfig};
use crate::stats::binomial_se;

/// Number of geometric shells searched for non-linear classes.
pub const EVENT_SHELLS: usize = 16;

/// How λ₀ is chosen in each replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum TuningLevel {
    Fixed { lambda0: f64 },
    /// λ₀ = factor·K̂ with K̂ = max_j ‖ψ_j‖_n of the realized linear class.
    Empirical { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventFrequency {
    pub frequency: f64,
    pub std_error: f64,
    pub reps: usize,
    /// Some search was not exact, so the frequency is an upper estimate.
    pub upper_estimate: bool,
}

/// K̂ = max_j ‖ψ_j‖_n of a linear class.
fn empirical_k(process: &impl IncrementProcess) -> Result<f64> {
    let coef = process
        .linear_coefficients()
        .ok_or_else(|| Error::invalid("an empirical λ₀ needs a linear class"))?;
    Ok(linalg::column_norms_n(coef).into_iter().fold(0.0, f64::max))
}

/// Whether sup over Θ_M(θ*) of |Y(θ,θ*)|/(‖θ−θ*‖₁ ∨ λ₀) ≤ λ₀ for one
/// realization, with Y the centered empirical increment (weights 1/n).
pub fn deviation_event_holds<P: IncrementProcess + ?Sized>(
    process: &P,
    center: &[f64],
    lambda0: f64,
    radius: f64,
    search: &SearchConfig,
    seed: u64,
) -> Result<(bool, bool)> {
    let n = process.n();
    let w = vec![1.0 / n as f64; n];
    let ball = BallSpec::new(center.to_vec(), radius)?;
    let (ratio, lower) = sup_ratio(process, &w, &ball, lambda0, EVENT_SHELLS, search, seed)?;
    Ok((ratio <= lambda0, lower))
}

/// Fraction of fresh realizations on which the event T_M(θ*) holds.
pub fn deviation_event_frequency<G: ProcessGenerator>(
    generator: &G,
    theta_star: &[f64],
    level: TuningLevel,
    radius: f64,
    reps: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<EventFrequency> {
    if reps < 100 {
        return Err(Error::invalid("event frequencies need at least 100 replications"));
    }
    let outcomes = map_replications(reps, |r| -> Result<(bool, bool)> {
        let mut rng = replication_rng(seed, r as u64);
        let process = generator.generate(&mut rng)?;
        let lambda0 = match level {
            TuningLevel::Fixed { lambda0 } => lambda0,
            TuningLevel::Empirical { factor } => factor * empirical_k(&process)?,
        };
        deviation_event_holds(&process, theta_star, lambda0, radius, search, derive_seed(seed, r as u64))
    });
    let mut hits = 0;
    let mut upper = false;
    for o in outcomes {
        let (held, lower) = o?;
        hits += held as usize;
        upper |= lower;
    }
    let frequency = hits as f64 / reps as f64;
    Ok(EventFrequency {
        frequency,
        std_error: binomial_se(frequency, reps),
        reps,
        upper_estimate: upper,
    })
}

/// Support of θ (exact zeros excluded).
pub fn support_of(theta: &[f64]) -> Vec<usize> {
    theta
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, _)| j)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseTarget {
    pub index: usize,
    pub theta: Vec<f64>,
    /// 2δH(4(1+δ)λΓ(L_δ,S_θ)/δ²) ∨ 2λ² + (1+δ)E(θ;θ₀) at the winner.
    pub value: f64,
    /// Candidates dropped because Γ(L_δ,S_θ) is infinite.
    pub skipped: Vec<usize>,
}

/// Best sparse approximation among `candidates`: the minimizer of the second
/// oracle bound, ties broken by smaller ‖θ‖₁ and then by position.
#[allow(clippy::too_many_arguments)]
pub fn sparse_approx_target(
    candidates: &[Vec<f64>],
    lambda: f64,
    lambda0: f64,
    delta: f64,
    h: &ConjugateSpec,
    gamma: impl Fn(f64, &[usize]) -> Result<f64>,
    excess: impl Fn(&[f64]) -> Result<f64>,
) -> Result<SparseTarget> {
    if candidates.is_empty() {
        return Err(Error::invalid("the candidate list is empty"));
    }
    let (_, wide_cone) = cone_constants(lambda, lambda0, delta)?;
    let mut best: Option<(f64, f64, usize)> = None;
    let mut skipped = Vec::new();
    for (k, theta) in candidates.iter().enumerate() {
        let support = support_of(theta);
        if support.len() > MAX_SUPPORT {
            return Err(Error::TooLarge {
                what: "candidate support".into(),
                size: support.len(),
                limit: MAX_SUPPORT,
            });
        }
        // an empty support leaves nothing to normalize, so Γ = 0
        let g = if support.is_empty() { 0.0 } else { gamma(wide_cone, &support)? };
        if g.is_infinite() {
            skipped.push(k);
            continue;
        }
        let e = excess(theta)?;
        let value = oracle_bounds(lambda, lambda0, delta, g, g, h, e.max(0.0))?.approx_rhs;
        let l1 = linalg::l1_norm(theta);
        let better = match best {
            None => true,
            Some((bv, bl, _)) => value < bv || (value == bv && l1 < bl),
        };
        if better {
            best = Some((value, l1, k));
        }
    }
    let (value, _, index) =
        best.ok_or_else(|| Error::invalid("every candidate has infinite effective sparsity"))?;
    Ok(SparseTarget {
        index,
        theta: candidates[index].clone(),
        value,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub n: usize,
    pub p: usize,
    /// Active coefficients θ⁰_j = ±signal for j < s0 (alternating signs).
    pub s0: usize,
    pub signal: f64,
    pub sigma: f64,
    pub delta: f64,
    /// λ = lambda_multiple·λ₀.
    pub lambda_multiple: f64,
    pub reps: usize,
    pub seed: u64,
    pub search: SearchConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n: 200,
            p: 400,
            s0: 3,
            signal: 1.0,
            sigma: 1.0,
            delta: 0.5,
            lambda_multiple: 2.0,
            reps: 200,
            seed: 1,
            search: SearchConfig::default(),
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 || self.reps == 0 {
            return Err(Error::invalid("the experiment needs n >= 2, p > 0 and reps > 0"));
        }
        if self.s0 == 0 || self.s0 > self.p.min(MAX_SUPPORT) {
            return Err(Error::invalid("s0 must lie in 1..=min(p, 12)"));
        }
        if !(self.lambda_multiple > 1.0) {
            return Err(Error::invalid("λ must exceed λ₀ (lambda_multiple > 1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) || !(self.sigma > 0.0) {
            return Err(Error::invalid("δ must lie in (0, 1) and σ must be positive"));
        }
        Ok(())
    }

    pub fn theta0(&self) -> Vec<f64> {
        (0..self.p)
            .map(|j| match j {
                j if j >= self.s0 => 0.0,
                j if j % 2 == 0 => self.signal,
                _ => -self.signal,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub replication: usize,
    pub lambda0: f64,
    pub lambda: f64,
    pub m0: f64,
    /// (1 − δ)E(θ̂;θ₀) + (λ − λ₀)‖θ̂ − θ⁰‖₁.
    pub lhs: f64,
    /// (λ − λ₀)M₀.
    pub rhs: f64,
    pub excess: f64,
    pub l1_error: f64,
    pub event_holds: bool,
    pub verdict: bool,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub n: usize,
    pub p: usize,
    pub s0: usize,
    pub delta: f64,
    pub lambda_multiple: f64,
    pub cone: f64,
    pub wide_cone: f64,
    /// Γ(L,S₀) and Γ(L_δ,S₀) for τ = ‖Z·‖_n.
    pub gamma_cone: f64,
    pub gamma_wide_cone: f64,
    pub phi2_cone: f64,
    /// H(v) = v²/4, the conjugate of G(u) = u².
    pub h: ConjugateSpec,
    /// λ₀, λ, H(2λΓ/δ), M₀ and M* at the population level K = 2σ max_j ‖z_j‖_n.
    pub reference_lambda0: f64,
    pub reference_lambda: f64,
    pub reference_margin_term: f64,
    pub reference_m0: f64,
    pub reference_m_star: f64,
    /// E(θ*;θ₀) with θ* = θ⁰.
    pub excess_star: f64,
    pub event_frequency: f64,
    pub event_std_error: f64,
    /// Fraction of replications with T where lhs ≤ rhs.
    pub verdict_frequency_given_event: f64,
    pub verdict_frequency: f64,
    pub solver_failures: usize,
    pub rows: Vec<OracleRow>,
}

/// Sparse Gaussian regression with the quadratic loss: per replication,
/// fresh noise, λ₀ = √(2 log(2p)/n)·K̂ from the realized envelope
/// ψ_ij = 2|ε_i z_ij|, the lasso at λ = multiple·λ₀, the event T on
/// Θ_{2M₀}(θ⁰), and the verdict lhs ≤ (λ − λ₀)M₀.
pub fn oracle_experiment(cfg: &OracleConfig) -> Result<OracleReport> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let z = gaussian_design(n, p, derive_seed(cfg.seed, 0), true);
    let theta0 = cfg.theta0();
    let support: Vec<usize> = (0..cfg.s0).collect();
    let tau = TauNorm::Design { z: z.clone() };
    let h = ConjugateSpec::Quadratic { c: 0.25 };
    let m = cfg.lambda_multiple;
    // L and L_δ depend on λ/λ₀ only
    let (l, wide_cone) = cone_constants(m, 1.0, cfg.delta)?;
    let es_l = effective_sparsity(&tau, l, &support)?;
    let es_ld = effective_sparsity(&tau, wide_cone, &support)?;
    let model = LossModel::quadratic(p);
    let generator = Generator::LinearGaussian {
        theta0: theta0.clone(),
        sigma: cfg.sigma,
    };
    let excess_star = excess_risk(&model, z.view(), &generator, &theta0, &theta0, 0, 0)?.value;

    let k_pop = 2.0 * cfg.sigma * linalg::column_norms_n(z.view()).into_iter().fold(0.0, f64::max);
    let ref_lambda0 = hoeffding_bound(p, n, k_pop);
    let ref_lambda = m * ref_lambda0;
    let (reference_m0, reference_m_star) = l1_error_radii(
        ref_lambda,
        ref_lambda0,
        cfg.delta,
        es_l.gamma,
        es_ld.gamma,
        &h,
        excess_star,
    )?;
    let reference_margin_term = h.eval(2.0 * ref_lambda * es_l.gamma / cfg.delta)?;

    let mean: Array1<f64> = z.dot(&ArrayView1::from(&theta0[..]));
    let rows = map_replications(cfg.reps, |r| {
        replicate(cfg, r, &z, &mean, &theta0, &model, &generator, &h, es_l.gamma, es_ld.gamma)
    });
    let t_count = rows.iter().filter(|r| r.event_holds).count();
    let verdicts_t = rows.iter().filter(|r| r.event_holds && r.verdict).count();
    let event_frequency = t_count as f64 / cfg.reps as f64;
    Ok(OracleReport {
        n,
        p,
        s0: cfg.s0,
        delta: cfg.delta,
        lambda_multiple: m,
        cone: l,
        wide_cone,
        gamma_cone: es_l.gamma,
        gamma_wide_cone: es_ld.gamma,
        phi2_cone: es_l.phi2,
        h,
        reference_lambda0: ref_lambda0,
        reference_lambda: ref_lambda,
        reference_margin_term,
        reference_m0,
        reference_m_star,
        excess_star,
        event_frequency,
        event_std_error: binomial_se(event_frequency, cfg.reps),
        verdict_frequency_given_event: if t_count == 0 {
            f64::NAN
        } else {
            verdicts_t as f64 / t_count as f64
        },
        verdict_frequency: rows.iter().filter(|r| r.verdict).count() as f64 / cfg.reps as f64,
        solver_failures: rows.iter().filter(|r| r.error.is_some() || !r.converged).count(),
        rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn replicate(
    cfg: &OracleConfig,
    r: usize,
    z: &Array2<f64>,
    mean: &Array1<f64>,
    theta0: &[f64],
    model: &LossModel,
    generator: &Generator,
    h: &ConjugateSpec,
    gamma_cone: f64,
    gamma_wide_cone: f64,
) -> OracleRow {
    let (n, p) = (cfg.n, cfg.p);
    let mut rng = replication_rng(cfg.seed, r as u64);
    let mut eps = vec![0.0; n];
    fill_gaussian(&mut rng, &mut eps);
    // g_i(θ) = −2σε_i z_iᵀ(θ − θ⁰), the centered quadratic increment
    let mut coef = z.clone();
    for (i, mut row) in coef.rows_mut().into_iter().enumerate() {
        let c = -2.0 * cfg.sigma * eps[i];
        row.mapv_inplace(|v| v * c);
    }
    let process = LinearProcess::new(coef).with_center(theta0.to_vec());
    let k_hat = process
        .as_ref()
        .map(|pr| linalg::column_norms_n(pr.coef().view()).into_iter().fold(0.0, f64::max))
        .unwrap_or(0.0);
    let lambda0 = hoeffding_bound(p, n, k_hat);
    let lambda = cfg.lambda_multiple * lambda0;
    let mut row = OracleRow {
        replication: r,
        lambda0,
        lambda,
        m0: f64::NAN,
        lhs: f64::NAN,
        rhs: f64::NAN,
        excess: f64::NAN,
        l1_error: f64::NAN,
        event_holds: false,
        verdict: false,
        converged: false,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let process = process?;
        let (m0, _) = l1_error_radii(lambda, lambda0, cfg.delta, gamma_cone, gamma_wide_cone, h, 0.0)?;
        row.m0 = m0;
        let (t, _) = deviation_event_holds(&process, theta0, lambda0, 2.0 * m0, &cfg.search, 0)?;
        row.event_holds = t;
        let y = Array1::from_iter(mean.iter().zip(&eps).map(|(m, e)| m + cfg.sigma * e));
        let sample = SampleSet::new(y, z.clone())?;
        let sol = solve(model, &sample, &SolverConfig::with_lambda(lambda))?;
        row.converged = sol.converged;
        let excess = excess_risk(model, z.view(), generator, &sol.theta, theta0, 0, 0)?.value;
        let l1 = linalg::l1_distance(&sol.theta, theta0);
        row.excess = excess;
        row.l1_error = l1;
        row.lhs = (1.0 - cfg.delta) * excess + (lambda - lambda0) * l1;
        row.rhs = (lambda - lambda0) * m0;
        row.verdict = row.lhs <= row.rhs;
        Ok(())
    })();
    if let Err(e) = outcome {
        row.error = Some(e.to_string());
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emp_process::{ConstantLoss, LinearGaussianDesign};
    use approx::assert_relative_eq;

    fn toy(n: usize, p: usize) -> LinearGaussianDesign {
        LinearGaussianDesign {
            z: gaussian_design(n, p, 11, true),
            sigma: 1.0,
        }
    }

    #[test]
    fn event_frequency_extremes_and_monotonicity() {
        let gen = toy(60, 10);
        let center = vec![0.0; 10];
        let cfg = SearchConfig::default();
        let f = |lambda0: f64| {
            deviation_event_frequency(&gen, &center, TuningLevel::Fixed { lambda0 }, 1.0, 200, 5, &cfg)
                .unwrap()
                .frequency
        };
        assert_eq!(f(0.0), 0.0);
        assert_eq!(f(1e6), 1.0);
        let grid = [0.05, 0.1, 0.2, 0.3, 0.4, 0.6];
        let freqs: Vec<f64> = grid.iter().map(|&l| f(l)).collect();
        assert!(freqs.windows(2).all(|w| w[1] >= w[0]), "{freqs:?}");
        assert!(freqs[0] < 1.0 && freqs[5] > 0.0);
    }

    #[test]
    fn constant_loss_always_satisfies_the_event() {
        let gen = ConstantLoss { n: 10, p: 3 };
        let f = deviation_event_frequency(
            &gen,
            &[0.0; 3],
            TuningLevel::Fixed { lambda0: 1e-9 },
            1.0,
            100,
            0,
            &SearchConfig::default(),
        )
        .unwrap();
        assert_eq!(f.frequency, 1.0);
        assert!(!f.upper_estimate);
    }

    #[test]
    fn linear_toy_with_empirical_level_holds_often() {
        let (n, p) = (200, 50);
        let gen = toy(n, p);
        let factor = hoeffding_bound(p, n, 1.0);
        let f = deviation_event_frequency(
            &gen,
            &vec![0.0; p],
            TuningLevel::Empirical { factor },
            1.0,
            500,
            9,
            &SearchConfig::default(),
        )
        .unwrap();
        assert!(f.frequency >= 0.9, "{f:?}");
    }

    #[test]
    fn too_few_replications_are_refused() {
        let gen = toy(10, 2);
        let r = deviation_event_frequency(
            &gen,
            &[0.0; 2],
            TuningLevel::Fixed { lambda0: 1.0 },
            1.0,
            99,
            0,
            &SearchConfig::default(),
        );
        assert!(r.is_err());
    }

    fn euclid_gamma(_l: f64, s: &[usize]) -> Result<f64> {
        Ok((s.len() as f64).sqrt())
    }

    #[test]
    fn three_candidate_toy_matches_hand_arithmetic() {
        // λ = 0.2, λ₀ = 0.1, δ = 0.5: L_δ = 18 and the H argument is
        // 4·1.5·0.2·Γ/0.25 = 4.8Γ, so the penalty is 2·0.5·(4.8Γ)²/4 = 5.76|S|
        let cands = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0, 0.0],
        ];
        let excess = |t: &[f64]| -> Result<f64> {
            Ok(match support_of(t).len() {
                1 => 8.0,
                2 => 1.0,
                _ => 0.0,
            })
        };
        let h = ConjugateSpec::Quadratic { c: 0.25 };
        let t = sparse_approx_target(&cands, 0.2, 0.1, 0.5, &h, euclid_gamma, excess).unwrap();
        // values: 5.76 + 12 = 17.76, 11.52 + 1.5 = 13.02, 17.28
        assert_eq!(t.index, 1);
        assert_relative_eq!(t.value, 13.02, epsilon = 1e-12);
    }

    #[test]
    fn truth_wins_among_zero_excess_candidates_and_ties_prefer_small_l1() {
        let h = ConjugateSpec::Quadratic { c: 0.25 };
        let zero = |_: &[f64]| -> Result<f64> { Ok(0.0) };
        let cands = vec![vec![1.0, 2.0, 0.0], vec![3.0, 0.0, 0.0], vec![0.5, 0.0, 0.0]];
        let t = sparse_approx_target(&cands, 0.2, 0.1, 0.5, &h, euclid_gamma, zero).unwrap();
        assert_eq!(t.index, 2);
        let single = sparse_approx_target(&cands[..1], 0.2, 0.1, 0.5, &h, euclid_gamma, zero).unwrap();
        assert_eq!(single.index, 0);
    }

    #[test]
    fn infinite_gamma_candidates_are_skipped() {
        let h = ConjugateSpec::Quadratic { c: 0.25 };
        let gamma = |_l: f64, s: &[usize]| -> Result<f64> {
            Ok(if s.contains(&0) { f64::INFINITY } else { 1.0 })
        };
        let cands = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let t = sparse_approx_target(&cands, 0.2, 0.1, 0.5, &h, gamma, |_| Ok(0.0)).unwrap();
        assert_eq!(t.index, 1);
        assert_eq!(t.skipped, vec![0]);
        assert!(sparse_approx_target(&cands[..1], 0.2, 0.1, 0.5, &h, gamma, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn noise_free_experiment_recovers_the_truth() {
        let cfg = OracleConfig {
            n: 40,
            p: 20,
            s0: 2,
            sigma: 0.0,
            reps: 3,
            ..OracleConfig::default()
        };
        // σ = 0 makes K̂ = 0, hence λ₀ = 0
        assert!(oracle_experiment(&cfg).is_err());
        let tiny = OracleConfig { sigma: 1e-6, ..cfg };
        let rep = oracle_experiment(&tiny).unwrap();
        for r in &rep.rows {
            assert!(r.error.is_none(), "{r:?}");
            assert!(r.verdict && r.event_holds);
            assert!(r.l1_error < 1e-4);
        }
    }

    #[test]
    fn small_experiment_is_deterministic_and_consistent() {
        let cfg = OracleConfig {
            n: 60,
            p: 40,
            reps: 20,
            ..OracleConfig::default()
        };
        let a = oracle_experiment(&cfg).unwrap();
        assert_eq!(a.rows.len(), 20);
        assert_relative_eq!(a.cone, 3.0, epsilon = 1e-15);
        assert_relative_eq!(a.wide_cone, 18.0, epsilon = 1e-14);
        assert!(a.gamma_wide_cone >= a.gamma_cone);
        for r in &a.rows {
            assert_relative_eq!(r.lambda, 2.0 * r.lambda0);
        }
        let b = oracle_experiment(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
