//! Simulation scenarios shared by the `simulate`, `check` and `scaling`
//! subcommands.

use serde::{Deserialize, Serialize};

use crate::emp_process::{
    bernstein_check, conditional_mean_en, contraction_check,
    massart_check, multivariate_contraction_check, peeling_check, peeling_constants,
    regime_bound, symmetrization_check, BallSpec, ContractionReport, IncrementProcess,
    LinearGaussianDesign, LinearProcess, LossProcess, Regime, RegimeInputs, SearchConfig,
    TailCheckReport,
};
use crate::emp_process::bounds::gaussian_subgaussian_tau;
use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::{build_envelope, EnvelopeMethod, LossModel};
use crate::rng::{derive_seed, replication_rng};
use crate::sample::{gaussian_design, Generator, MixtureParams, SampleSet};
use crate::stats::{linear_fit, ratio_se, two_predictor_fit, LinearFit};

/// Huber threshold of the GLM toy.
pub const HUBER_KAPPA: f64 = 1.0;

/// One Monte Carlo cell: E_n against the regime bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub regime: Regime,
    pub n: usize,
    pub p: usize,
    pub m: f64,
    pub estimate: f64,
    pub se: f64,
    pub bound: f64,
    pub ratio: f64,
    pub lower_estimate: bool,
}

impl SimRow {
    /// E_n ≤ bound + 3·SE.
    pub fn dominated(&self) -> bool {
        self.estimate <= self.bound + 3.0 * self.se
    }
}

/// Huber regression on a normalized Gaussian design with y ~ N(0, 1).
pub fn huber_toy(n: usize, p: usize, seed: u64) -> Result<(LossProcess, LinearProcess, f64)> {
    let z = gaussian_design(n, p, seed, true);
    let model = LossModel::huber(p, HUBER_KAPPA)?;
    let gen = Generator::LinearGaussian {
        theta0: vec![0.0; p],
        sigma: 1.0,
    };
    let sample = gen.sample(&z, &mut replication_rng(seed, 0))?;
    let k_n = build_envelope(&model, &sample, EnvelopeMethod::Analytic)?.k_n();
    let process = LossProcess::new(model, sample, vec![0.0; p])?.with_envelope_k_n(k_n);
    // |ρ_θ − ρ_θ̃| ≤ κ|zᵀ(θ − θ̃)|
    let linear = LinearProcess::new(z * HUBER_KAPPA);
    Ok((process, linear, k_n))
}

/// Two-component mixture regression with fixed (π, σ) on q covariates split
/// into two blocks, centered at the true coefficients.
pub fn mixture_toy(n: usize, q: usize, seed: u64) -> Result<(LossProcess, ndarray::Array2<f64>, Vec<usize>)> {
    if q < 2 {
        return Err(Error::invalid("the mixture toy needs at least two covariates"));
    }
    let blocks = vec![q / 2, q - q / 2];
    let mut b1 = vec![0.0; blocks[0]];
    let mut b2 = vec![0.0; blocks[1]];
    b1[0] = 0.5;
    b2[0] = -0.5;
    let params = MixtureParams {
        pi: vec![0.5, 0.5],
        sigma: vec![1.0, 1.0],
        beta: vec![b1, b2],
    };
    let model = LossModel::mixture_fixed(blocks.clone(), params.pi.clone(), params.sigma.clone(), 2.0)?;
    let z = gaussian_design(n, q, seed, true);
    let sample: SampleSet = Generator::MixtureRegression { params: params.clone() }
        .sample(&z, &mut replication_rng(seed, 0))?;
    let envelope = model.block_envelope(&sample)?;
    let process = LossProcess::new(model, sample, params.flat_beta())?;
    Ok((process, envelope, blocks))
}

fn max_column_norm(a: ndarray::ArrayView2<f64>) -> f64 {
    linalg::column_norms_n(a).into_iter().fold(0.0, f64::max)
}

/// E_n for one (regime, n, p, M) cell. The design and the sample depend on
/// (seed, n, p) only, so cells differing in M share them.
pub fn estimate_cell(
    regime: Regime,
    n: usize,
    p: usize,
    radius: f64,
    reps: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<SimRow> {
    let ball_at = |center: Vec<f64>| BallSpec::new(center, radius);
    let mc_seed = derive_seed(seed, 1);
    let (est, k_n, inputs) = match regime {
        Regime::Linear => {
            let process = LinearProcess::new(gaussian_design(n, p, seed, true));
            let k_n = max_column_norm(process.coef().view());
            let est = conditional_mean_en(&process, &ball_at(vec![0.0; p])?, reps, mc_seed, search)?;
            (est, k_n, RegimeInputs::default())
        }
        Regime::Glm => {
            let (process, _, k_n) = huber_toy(n, p, seed)?;
            let est = conditional_mean_en(&process, &ball_at(vec![0.0; p])?, reps, mc_seed, search)?;
            (est, k_n, RegimeInputs::default())
        }
        Regime::ExtendedGlm => {
            let (process, envelope, blocks) = mixture_toy(n, p, seed)?;
            let k_n = max_column_norm(envelope.view());
            let ball = ball_at(process.center().to_vec())?;
            let est = conditional_mean_en(&process, &ball, reps, mc_seed, search)?;
            let inputs = RegimeInputs {
                components: blocks.len(),
                ..RegimeInputs::default()
            };
            (est, k_n, inputs)
        }
        Regime::Nonlinear => {
            return Err(Error::invalid("the non-linear regime has no simulation scenario"));
        }
    };
    let bound = regime_bound(regime, p, n, k_n, radius, &inputs)?;
    Ok(SimRow {
        regime,
        n,
        p,
        m: radius,
        estimate: est.mean,
        se: est.std_error,
        bound,
        ratio: est.mean / bound,
        lower_estimate: est.lower_estimate,
    })
}

/// E_n over the grid n × p × M, one design per (n, p).
#[allow(clippy::too_many_arguments)]
pub fn regime_grid(
    regime: Regime,
    n_grid: &[usize],
    p_grid: &[usize],
    m_grid: &[f64],
    reps: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<Vec<SimRow>> {
    let mut rows = Vec::new();
    for (a, &n) in n_grid.iter().enumerate() {
        for (b, &p) in p_grid.iter().enumerate() {
            let cell_seed = derive_seed(seed, (a * p_grid.len() + b) as u64);
            for &m in m_grid {
                rows.push(estimate_cell(regime, n, p, m, reps, cell_seed, search)?);
            }
        }
    }
    Ok(rows)
}

/// Ratio of two grid cells against its predicted value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPair {
    pub from: (usize, usize),
    pub to: (usize, usize),
    pub observed: f64,
    pub se: f64,
    pub predicted: f64,
    /// observed / predicted − 1.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<SimRow>,
    /// E_n(n', p)/E_n(n, p) for consecutive n, predicted √(n/n').
    pub n_pairs: Vec<ScalingPair>,
    /// E_n(n, p')/E_n(n, p) for consecutive p, predicted √(log p'/log p).
    pub p_pairs: Vec<ScalingPair>,
    /// log E_n ≈ c + a·log √(log p) + b·log(1/√n); a and b near 1.
    pub exponent_log_p: f64,
    pub exponent_inv_sqrt_n: f64,
    pub intercept: f64,
    /// estimate/bound ≈ a + b log n, a flat line for the √(log p/n) shape.
    pub shape_fit: LinearFit,
}

impl ScalingTable {
    pub fn max_deviation(&self) -> f64 {
        self.n_pairs
            .iter()
            .chain(&self.p_pairs)
            .map(|q| q.deviation.abs())
            .fold(0.0, f64::max)
    }
}

fn pair(a: &SimRow, b: &SimRow, predicted: f64) -> ScalingPair {
    let observed = b.estimate / a.estimate;
    ScalingPair {
        from: (a.n, a.p),
        to: (b.n, b.p),
        observed,
        se: ratio_se(b.estimate, b.se, a.estimate, a.se),
        predicted,
        deviation: observed / predicted - 1.0,
    }
}

/// E_n across n × p at a single radius, with pairwise ratios and fitted
/// exponents against √(log p) and 1/√n.
pub fn scaling_study(
    regime: Regime,
    n_grid: &[usize],
    p_grid: &[usize],
    radius: f64,
    reps: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<ScalingTable> {
    if n_grid.is_empty() || p_grid.is_empty() || p_grid.contains(&1) {
        return Err(Error::invalid("scaling needs nonempty grids and p >= 2"));
    }
    let rows = regime_grid(regime, n_grid, p_grid, &[radius], reps, seed, search)?;
    let at = |a: usize, b: usize| &rows[a * p_grid.len() + b];
    let mut n_pairs = Vec::new();
    let mut p_pairs = Vec::new();
    for a in 0..n_grid.len() {
        for b in 0..p_grid.len() {
            if a + 1 < n_grid.len() {
                let predicted = (n_grid[a] as f64 / n_grid[a + 1] as f64).sqrt();
                n_pairs.push(pair(at(a, b), at(a + 1, b), predicted));
            }
            if b + 1 < p_grid.len() {
                let predicted = ((p_grid[b + 1] as f64).ln() / (p_grid[b] as f64).ln()).sqrt();
                p_pairs.push(pair(at(a, b), at(a, b + 1), predicted));
            }
        }
    }
    let x1: Vec<f64> = rows.iter().map(|r| (r.p as f64).ln().sqrt().ln()).collect();
    let x2: Vec<f64> = rows.iter().map(|r| -0.5 * (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.estimate.ln()).collect();
    let [intercept, exponent_log_p, exponent_inv_sqrt_n] = if n_grid.len() > 1 && p_grid.len() > 1 {
        two_predictor_fit(&x1, &x2, &y)?
    } else {
        [f64::NAN; 3]
    };
    let log_n: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let shape: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let shape_fit = linear_fit(&log_n, &shape).unwrap_or(LinearFit {
        intercept: f64::NAN,
        slope: f64::NAN,
        r_squared: f64::NAN,
    });
    Ok(ScalingTable {
        rows,
        n_pairs,
        p_pairs,
        exponent_log_p,
        exponent_inv_sqrt_n,
        intercept,
        shape_fit,
    })
}

/// E_n(Huber)/E_n(κ-linear comparison) on one seeded toy sample.
pub fn huber_contraction(n: usize, p: usize, reps: usize, seed: u64, search: &SearchConfig) -> Result<ContractionReport> {
    let (process, linear, _) = huber_toy(n, p, seed)?;
    let ball = BallSpec::origin(p, 1.0)?;
    contraction_check(&process, &linear, &ball, reps, derive_seed(seed, 1), search)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureContractionRow {
    pub n: usize,
    pub q: usize,
    pub report: ContractionReport,
}

/// The mixture comparison ratio E sup|Y^ε| / E sup X for each n.
pub fn mixture_contraction_grid(
    n_grid: &[usize],
    q: usize,
    reps: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<Vec<MixtureContractionRow>> {
    n_grid
        .iter()
        .map(|&n| {
            let cell = derive_seed(seed, n as u64);
            let (process, envelope, blocks) = mixture_toy(n, q, cell)?;
            let ball = BallSpec::new(process.center().to_vec(), 1.0)?;
            let report = multivariate_contraction_check(
                &process,
                envelope.view(),
                &blocks,
                &ball,
                reps,
                derive_seed(cell, 1),
                search,
            )?;
            Ok(MixtureContractionRow { n, q, report })
        })
        .collect()
}

/// max/min of the mixture ratios, ∞ when some ratio is undefined.
pub fn ratio_spread(rows: &[MixtureContractionRow]) -> f64 {
    let ratios: Vec<f64> = rows.iter().map(|r| r.report.ratio.unwrap_or(f64::NAN)).collect();
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return f64::INFINITY;
    }
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

/// Tail-bound checks on a normalized Gaussian design at level t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSuite {
    pub bernstein: TailCheckReport,
    pub massart: TailCheckReport,
    pub peeling: TailCheckReport,
}

impl TailSuite {
    pub fn reports(&self) -> [&TailCheckReport; 3] {
        [&self.bernstein, &self.massart, &self.peeling]
    }
}

/// Bernstein: ψ_j(X_i) ~ N(0, 1) with L = 2; Massart: the linear class
/// ψ = Z with E_n from an independent Monte Carlo run; peeling: the linear
/// Gaussian regression increments with constants from the symmetrization
/// corollary at λ₀ = √(2 log(2p)/n).
pub fn tail_suite(n: usize, p: usize, t: f64, reps: usize, seed: u64, search: &SearchConfig) -> Result<TailSuite> {
    let l = 2.0;
    let tau = gaussian_subgaussian_tau(1.0, l)?;
    let bernstein = bernstein_check(n, p, 1.0, l, tau, t, reps, derive_seed(seed, 0));

    let z = gaussian_design(n, p, derive_seed(seed, 1), true);
    let ball = BallSpec::origin(p, 1.0)?;
    let linear = LinearProcess::new(z.clone());
    let e_n = conditional_mean_en(&linear, &ball, reps, derive_seed(seed, 2), search)?.mean;
    let massart = massart_check(&linear, &ball, e_n, t, reps, derive_seed(seed, 3), search)?;

    let gen = LinearGaussianDesign { z, sigma: 1.0 };
    let k_bar = 2.0 * max_column_norm(gen.z.view());
    let lambda0 = (2.0 * (2.0 * p as f64).ln() / n as f64).sqrt();
    let (lambda_star, k_star) = peeling_constants(lambda0, k_bar, p, n);
    let peeling = peeling_check(&gen, &ball, lambda_star, k_star, t, reps, derive_seed(seed, 4), search)?;
    Ok(TailSuite {
        bernstein,
        massart,
        peeling,
    })
}

/// The symmetrization lemma on the linear Gaussian regression increments.
pub fn symmetrization_suite(
    n: usize,
    p: usize,
    t: f64,
    reps: usize,
    seed: u64,
    search: &SearchConfig,
) -> Result<crate::emp_process::SymmetrizationReport> {
    let gen = LinearGaussianDesign {
        z: gaussian_design(n, p, derive_seed(seed, 5), true),
        sigma: 1.0,
    };
    symmetrization_check(&gen, &BallSpec::origin(p, 1.0)?, t, reps, derive_seed(seed, 6), search)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_the_radius_doubles_linear_and_glm_estimates() {
        let cfg = SearchConfig::default();
        for regime in [Regime::Linear, Regime::Glm] {
            let rows = regime_grid(regime, &[32], &[4], &[1.0, 2.0], 100, 3, &cfg).unwrap();
            let (a, b) = (&rows[0], &rows[1]);
            if regime == Regime::Linear {
                assert_eq!(b.estimate, 2.0 * a.estimate);
            }
            assert_eq!(b.bound, 2.0 * a.bound);
        }
    }

    #[test]
    fn quadrupling_n_halves_the_linear_estimate() {
        let t = scaling_study(Regime::Linear, &[64, 256], &[8], 1.0, 400, 1, &SearchConfig::default()).unwrap();
        assert_eq!(t.n_pairs.len(), 1);
        assert!((t.n_pairs[0].observed - 0.5).abs() < 0.075, "{:?}", t.n_pairs);
    }

    #[test]
    fn mixture_toy_is_centered_inside_its_box() {
        let (process, envelope, blocks) = mixture_toy(20, 4, 2).unwrap();
        assert_eq!(blocks, vec![2, 2]);
        assert_eq!(envelope.dim(), (20, 4));
        assert_eq!(process.center(), &[0.5, 0.0, -0.5, 0.0]);
        assert!(mixture_toy(20, 1, 2).is_err());
    }

    #[test]
    fn nonlinear_regime_is_refused() {
        assert!(estimate_cell(Regime::Nonlinear, 10, 2, 1.0, 10, 0, &SearchConfig::default()).is_err());
    }
}
