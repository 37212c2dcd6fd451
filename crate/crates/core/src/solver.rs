//! Proximal-gradient solver for θ̂ = argmin P_nρ_θ + λ Σ_j w_j|θ_j|.
//!
//! Accelerated proximal gradient with backtracking and function-value
//! restarts. The proximal step is exact for every coordinate type: soft
//! threshold then clamp for box coordinates, and shifted projection onto the
//! capped simplex for mixing weights (|π_k| = π_k on the feasible set).

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::losses::{LossKind, LossModel};
use crate::rng::{map_replications, replication_rng};
use crate::sample::SampleSet;

/// sign(v)·max(|v| − κ, 0).
pub fn soft_threshold(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_iterations: usize,
    /// KKT tolerance for convex kinds, prox-gradient mapping tolerance
    /// otherwise. `None` picks 1e-8 (convex) or 1e-6 (non-convex).
    pub tolerance: Option<f64>,
    pub initial_step: f64,
    pub shrink: f64,
    /// Number of random starts for non-convex kinds.
    pub restarts: usize,
    pub seed: u64,
    /// Per-coordinate penalty switch; `None` penalizes everything.
    pub penalty_mask: Option<Vec<bool>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            max_iterations: 100_000,
            tolerance: None,
            initial_step: 1.0,
            shrink: 0.5,
            restarts: 16,
            seed: 0,
            penalty_mask: None,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be nonnegative"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::invalid("shrink factor must lie in (0, 1)"));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::invalid("initial step must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be >= 1"));
        }
        if let Some(m) = &self.penalty_mask {
            check_len("penalty mask", p, m.len())?;
        }
        Ok(())
    }

    fn weights(&self, p: usize) -> Vec<f64> {
        match &self.penalty_mask {
            Some(m) => m.iter().map(|&on| if on { self.lambda } else { 0.0 }).collect(),
            None => vec![self.lambda; p],
        }
    }

    /// Mask leaving mixing weights and scales unpenalized.
    pub fn mask_excluding_nuisance(model: &LossModel) -> Vec<bool> {
        let mut mask = vec![true; model.dim()];
        for j in model.nuisance_coordinates() {
            mask[j] = false;
        }
        mask
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub theta: Vec<f64>,
    pub objective: f64,
    /// KKT residual for convex kinds without active box constraints,
    /// otherwise the prox-gradient mapping norm.
    pub kkt: f64,
    pub iterations: usize,
    pub converged: bool,
    pub best_restart: usize,
    /// Times an extrapolated point left the feasible set and was projected back.
    pub projections: usize,
}

/// Mean loss P_nρ_θ (uncentered).
pub fn mean_loss(model: &LossModel, sample: &SampleSet, theta: &[f64]) -> Result<f64> {
    model.check_parameter(theta)?;
    check_len("sample covariates", model.covariate_dim(), sample.covariate_dim())?;
    Ok(smooth_value(model, sample, theta))
}

/// P_nρ_θ + λ‖θ‖₁.
pub fn objective(model: &LossModel, sample: &SampleSet, lambda: f64, theta: &[f64]) -> Result<f64> {
    Ok(mean_loss(model, sample, theta)? + penalty(&vec![lambda; theta.len()], theta))
}

fn penalty(weights: &[f64], theta: &[f64]) -> f64 {
    weights
        .iter()
        .zip(theta)
        .filter(|(_, t)| **t != 0.0)
        .map(|(w, t)| w * t.abs())
        .sum()
}

fn smooth_value(model: &LossModel, sample: &SampleSet, theta: &[f64]) -> f64 {
    let n = sample.n() as f64;
    if let LossKind::Quadratic = model.kind() {
        let r = &sample.y - &sample.z.dot(&ArrayView1::from(theta));
        return r.dot(&r) / n;
    }
    (0..sample.n())
        .map(|i| model.loss(theta, sample.y[i], sample.z.row(i)))
        .sum::<f64>()
        / n
}

/// Value and gradient of P_nρ_θ.
pub fn smooth_value_grad(
    model: &LossModel,
    sample: &SampleSet,
    theta: &[f64],
    grad: &mut [f64],
) -> f64 {
    let n = sample.n() as f64;
    grad.iter_mut().for_each(|g| *g = 0.0);
    if let LossKind::Quadratic = model.kind() {
        let r: Array1<f64> = &sample.y - &sample.z.dot(&ArrayView1::from(theta));
        let g = sample.z.t().dot(&r);
        for (o, v) in grad.iter_mut().zip(g.iter()) {
            *o = -2.0 * v / n;
        }
        return r.dot(&r) / n;
    }
    let mut value = 0.0;
    for i in 0..sample.n() {
        let (y, z) = (sample.y[i], sample.z.row(i));
        value += model.loss(theta, y, z);
        model.add_gradient(theta, y, z, 1.0 / n, grad);
    }
    value / n
}

/// ‖∇P_nρ_0‖_∞ over penalized coordinates: the smallest λ with θ̂ = 0 for
/// convex unconstrained kinds.
pub fn lambda_max(model: &LossModel, sample: &SampleSet) -> Result<f64> {
    let zero = vec![0.0; model.dim()];
    model.check_parameter(&zero)?;
    let mut g = vec![0.0; model.dim()];
    smooth_value_grad(model, sample, &zero, &mut g);
    Ok(linalg::linf_norm(&g))
}

/// KKT residual: distance of −∇_j to the subdifferential of w_j|θ_j|.
pub fn kkt_residual(grad: &[f64], theta: &[f64], weights: &[f64]) -> f64 {
    grad.iter()
        .zip(theta)
        .zip(weights)
        .map(|((g, t), w)| {
            if *t == 0.0 {
                (g.abs() - w).max(0.0)
            } else {
                (g + w * t.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

struct Problem<'a> {
    model: &'a LossModel,
    sample: &'a SampleSet,
    weights: Vec<f64>,
    simplex: Option<std::ops::Range<usize>>,
    unconstrained: bool,
}

impl Problem<'_> {
    /// prox_{step·g}(v), with g = Σ w_j|θ_j| + indicator of the feasible set.
    fn prox(&self, v: &[f64], step: f64, out: &mut [f64]) {
        let b = self.model.bounds();
        for j in 0..v.len() {
            out[j] = soft_threshold(v[j], step * self.weights[j]).clamp(b.lower[j], b.upper[j]);
        }
        if let Some(range) = &self.simplex {
            let shifted: Vec<f64> = range.clone().map(|j| v[j] - step * self.weights[j]).collect();
            linalg::project_capped_simplex(
                &shifted,
                &b.lower[range.clone()],
                &b.upper[range.clone()],
                1.0,
                &mut out[range.clone()],
            );
        }
    }

    fn composite(&self, theta: &[f64]) -> f64 {
        smooth_value(self.model, self.sample, theta) + penalty(&self.weights, theta)
    }

    /// Optimality measure at θ (needs ∇ at θ).
    fn stationarity(&self, theta: &[f64], grad: &[f64], step: f64) -> f64 {
        if self.unconstrained {
            return kkt_residual(grad, theta, &self.weights);
        }
        let v: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t - step * g).collect();
        let mut plus = vec![0.0; theta.len()];
        self.prox(&v, step, &mut plus);
        linalg::linf_norm(
            &theta
                .iter()
                .zip(&plus)
                .map(|(a, b)| (a - b) / step)
                .collect::<Vec<_>>(),
        )
    }

    fn run(&self, start: Vec<f64>, config: &SolverConfig, tol: f64) -> Result<Solution> {
        let p = start.len();
        let mut x = start;
        let mut projections = 0;
        if self.model.project(&mut x) {
            projections += 1;
        }
        let mut y = x.clone();
        let mut t: f64 = 1.0;
        let mut step = config.initial_step;
        let mut grad = vec![0.0; p];
        let mut grad_x = vec![0.0; p];
        let mut x_new = vec![0.0; p];
        let mut v = vec![0.0; p];
        let mut f_x = self.composite(&x);
        let mut converged = false;
        let mut iterations = 0;
        let mut measure = f64::INFINITY;
        while iterations < config.max_iterations {
            iterations += 1;
            let f_y = smooth_value_grad(self.model, self.sample, &y, &mut grad);
            if !f_y.is_finite() {
                return Err(Error::NonFinite(format!("smooth loss at iteration {iterations}")));
            }
            loop {
                for j in 0..p {
                    v[j] = y[j] - step * grad[j];
                }
                self.prox(&v, step, &mut x_new);
                let mut lin = 0.0;
                let mut sq = 0.0;
                for j in 0..p {
                    let d = x_new[j] - y[j];
                    lin += grad[j] * d;
                    sq += d * d;
                }
                let f_new = smooth_value(self.model, self.sample, &x_new);
                let slack = 1e-12 * f_y.abs().max(1.0);
                if f_new.is_finite() && f_new <= f_y + lin + sq / (2.0 * step) + slack {
                    break;
                }
                step *= config.shrink;
                if step < 1e-30 {
                    return Err(Error::NonFinite("step size underflow in line search".into()));
                }
            }
            let f_new = self.composite(&x_new);
            if !f_new.is_finite() {
                return Err(Error::NonFinite(format!("objective at iteration {iterations}")));
            }
            if f_new > f_x && t > 1.0 {
                // momentum overshoot: restart from the last iterate
                t = 1.0;
                y.copy_from_slice(&x);
                continue;
            }
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_new;
            for j in 0..p {
                y[j] = x_new[j] + beta * (x_new[j] - x[j]);
            }
            t = t_new;
            std::mem::swap(&mut x, &mut x_new);
            f_x = f_new;
            if self.model.project(&mut y) {
                projections += 1;
            }
            if iterations % 10 == 0 || iterations == config.max_iterations {
                smooth_value_grad(self.model, self.sample, &x, &mut grad_x);
                measure = self.stationarity(&x, &grad_x, step);
                if measure <= tol {
                    converged = true;
                    break;
                }
                // allow the step to grow back after conservative backtracking
                step /= config.shrink.sqrt();
            }
        }
        if !converged {
            smooth_value_grad(self.model, self.sample, &x, &mut grad_x);
            measure = self.stationarity(&x, &grad_x, step);
            converged = measure <= tol;
        }
        Ok(Solution {
            objective: f_x,
            theta: x,
            kkt: measure,
            iterations,
            converged,
            best_restart: 0,
            projections,
        })
    }
}

fn problem<'a>(model: &'a LossModel, sample: &'a SampleSet, config: &SolverConfig) -> Result<Problem<'a>> {
    config.validate(model.dim())?;
    check_len("sample covariates", model.covariate_dim(), sample.covariate_dim())?;
    if sample.n() == 0 {
        return Err(Error::invalid("empty sample"));
    }
    let nuisance = model.nuisance_coordinates();
    let simplex = if nuisance.is_empty() {
        None
    } else {
        let r = nuisance.len() / 2;
        Some(nuisance[0]..nuisance[0] + r)
    };
    Ok(Problem {
        model,
        sample,
        weights: config.weights(model.dim()),
        simplex,
        unconstrained: model.is_convex() && !model.bounds().lower.iter().chain(&model.bounds().upper).any(|b| b.is_finite()),
    })
}

fn tolerance(model: &LossModel, config: &SolverConfig) -> f64 {
    config
        .tolerance
        .unwrap_or(if model.is_convex() { 1e-8 } else { 1e-6 })
}

/// Solves from the origin (convex kinds) or from `restarts` uniform draws
/// in the box (non-convex kinds), returning the best run.
pub fn solve(model: &LossModel, sample: &SampleSet, config: &SolverConfig) -> Result<Solution> {
    let prob = problem(model, sample, config)?;
    let tol = tolerance(model, config);
    if model.is_convex() {
        return prob.run(vec![0.0; model.dim()], config, tol);
    }
    let runs = map_replications(config.restarts, |k| {
        let start = model.sample_parameter(&mut replication_rng(config.seed, k as u64), 1.0);
        prob.run(start, config, tol)
    });
    let mut best: Option<Solution> = None;
    for (k, run) in runs.into_iter().enumerate() {
        let mut sol = run?;
        sol.best_restart = k;
        if best.as_ref().is_none_or(|b| sol.objective < b.objective) {
            best = Some(sol);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Single run from a given starting point.
pub fn solve_from(
    model: &LossModel,
    sample: &SampleSet,
    config: &SolverConfig,
    start: &[f64],
) -> Result<Solution> {
    check_len("starting point", model.dim(), start.len())?;
    let prob = problem(model, sample, config)?;
    prob.run(start.to_vec(), config, tolerance(model, config))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub lambdas: Vec<f64>,
    pub solutions: Vec<Solution>,
    /// ‖θ̂‖₁ nonincreasing in λ (checked for convex kinds only; always true otherwise).
    pub l1_monotone: bool,
}

/// Warm-started solutions along a descending λ grid.
pub fn lambda_path(
    model: &LossModel,
    sample: &SampleSet,
    grid: &[f64],
    config: &SolverConfig,
) -> Result<PathResult> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if grid.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::invalid("lambda grid must be sorted in descending order"));
    }
    let mut solutions: Vec<Solution> = Vec::with_capacity(grid.len());
    for (k, &lambda) in grid.iter().enumerate() {
        let cfg = SolverConfig {
            lambda,
            ..config.clone()
        };
        let sol = if k == 0 {
            solve(model, sample, &cfg)?
        } else {
            solve_from(model, sample, &cfg, &solutions[k - 1].theta)?
        };
        solutions.push(sol);
    }
    let l1_monotone = !model.is_convex()
        || solutions.windows(2).all(|w| {
            let (a, b) = (linalg::l1_norm(&w[0].theta), linalg::l1_norm(&w[1].theta));
            a <= b + 1e-6 * b.max(1.0)
        });
    Ok(PathResult {
        lambdas: grid.to_vec(),
        solutions,
        l1_monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{gaussian_design, Generator};
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn intercept_sample(y: &[f64]) -> SampleSet {
        SampleSet::new(Array1::from(y.to_vec()), Array2::ones((y.len(), 1))).unwrap()
    }

    fn lasso_toy(n: usize, p: usize, seed: u64) -> SampleSet {
        let z = gaussian_design(n, p, seed, true);
        let mut theta0 = vec![0.0; p];
        theta0[0] = 1.0;
        theta0[1] = -0.5;
        let g = Generator::LinearGaussian { theta0, sigma: 0.5 };
        g.sample(&z, &mut replication_rng(seed, 1)).unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(0.0, 7.0), 0.0);
    }

    #[test]
    fn objective_hand_example() {
        let s = SampleSet::new(array![1.0, 3.0], array![[1.0], [1.0]]).unwrap();
        let m = LossModel::quadratic(1);
        assert_relative_eq!(objective(&m, &s, 0.5, &[1.0]).unwrap(), 2.5, epsilon = 1e-15);
    }

    #[test]
    fn intercept_model_matches_grid_search() {
        let s = intercept_sample(&[0.0, 2.0, 1.5, 0.5]);
        let m = LossModel::quadratic(1);
        let sol = solve(&m, &s, &SolverConfig::with_lambda(1.0)).unwrap();
        // dense grid oracle over [−2, 2]
        let mut best = (f64::INFINITY, 0.0);
        let mut th = -2.0;
        while th <= 2.0 {
            let f = objective(&m, &s, 1.0, &[th]).unwrap();
            if f < best.0 {
                best = (f, th);
            }
            th += 1e-5;
        }
        assert!((sol.theta[0] - best.1).abs() < 2e-5);
        assert_relative_eq!(sol.theta[0], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn unpenalized_intercept_is_the_mean() {
        let s = intercept_sample(&[0.0, 2.0, 1.5, 0.7]);
        let sol = solve(&LossModel::quadratic(1), &s, &SolverConfig::with_lambda(0.0)).unwrap();
        assert_relative_eq!(sol.theta[0], 1.05, epsilon = 1e-8);
    }

    #[test]
    fn objective_field_matches_reevaluation() {
        let s = lasso_toy(40, 10, 3);
        let m = LossModel::quadratic(10);
        let sol = solve(&m, &s, &SolverConfig::with_lambda(0.05)).unwrap();
        assert!(sol.converged);
        assert!(sol.kkt <= 1e-8);
        let f = objective(&m, &s, 0.05, &sol.theta).unwrap();
        assert!((f - sol.objective).abs() <= 1e-10);
    }

    #[test]
    fn solution_beats_random_points() {
        let s = lasso_toy(30, 6, 5);
        let m = LossModel::huber(6, 1.0).unwrap();
        let sol = solve(&m, &s, &SolverConfig::with_lambda(0.1)).unwrap();
        let mut rng = replication_rng(9, 0);
        for _ in 0..100 {
            let th = m.sample_parameter(&mut rng, 2.0);
            assert!(objective(&m, &s, 0.1, &th).unwrap() >= sol.objective - 1e-12);
        }
    }

    #[test]
    fn path_matches_cold_solves() {
        let s = lasso_toy(20, 5, 7);
        let m = LossModel::quadratic(5);
        let grid = [0.5, 0.2, 0.1, 0.05, 0.01];
        let path = lambda_path(&m, &s, &grid, &SolverConfig::default()).unwrap();
        assert!(path.l1_monotone);
        for (lam, sol) in grid.iter().zip(&path.solutions) {
            let cold = solve(&m, &s, &SolverConfig::with_lambda(*lam)).unwrap();
            assert!((cold.objective - sol.objective).abs() < 1e-6);
        }
        let single = lambda_path(&m, &s, &[0.2], &SolverConfig::default()).unwrap();
        let direct = solve(&m, &s, &SolverConfig::with_lambda(0.2)).unwrap();
        assert_eq!(single.solutions[0], direct);
    }

    #[test]
    fn infinite_lambda_gives_zero() {
        let s = lasso_toy(20, 5, 2);
        let m = LossModel::quadratic(5);
        let path = lambda_path(&m, &s, &[f64::INFINITY, 0.0], &SolverConfig::default()).unwrap();
        assert!(path.solutions[0].theta.iter().all(|t| *t == 0.0));
        // λ = 0 reproduces least squares: gradient vanishes
        let mut g = vec![0.0; 5];
        smooth_value_grad(&m, &s, &path.solutions[1].theta, &mut g);
        assert!(linalg::linf_norm(&g) < 1e-7);
    }

    #[test]
    fn unsorted_grid_is_rejected() {
        let s = lasso_toy(10, 2, 1);
        assert!(lambda_path(&LossModel::quadratic(2), &s, &[0.1, 0.2], &SolverConfig::default()).is_err());
    }

    #[test]
    fn mixture_restarts_are_monotone() {
        let params = crate::sample::MixtureParams {
            pi: vec![0.5, 0.5],
            sigma: vec![0.5, 0.5],
            beta: vec![vec![1.0], vec![-1.0]],
        };
        let z = gaussian_design(60, 2, 4, false);
        let s = Generator::MixtureRegression { params }
            .sample(&z, &mut replication_rng(4, 2))
            .unwrap();
        let m = LossModel::mixture_free(vec![1, 1], 2.0, 0.2, 3.0, 0.05).unwrap();
        let mut cfg = SolverConfig {
            lambda: 0.01,
            max_iterations: 2000,
            penalty_mask: Some(SolverConfig::mask_excluding_nuisance(&m)),
            ..SolverConfig::default()
        };
        let mut prev = f64::INFINITY;
        for r in [1, 2, 4, 8] {
            cfg.restarts = r;
            let sol = solve(&m, &s, &cfg).unwrap();
            assert!(sol.objective <= prev);
            m.check_parameter(&sol.theta).unwrap();
            prev = sol.objective;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn soft_threshold_is_odd_and_lipschitz(a in -10.0f64..10.0, b in -10.0f64..10.0, k in 0.0f64..5.0) {
            prop_assert_eq!(soft_threshold(-a, k), -soft_threshold(a, k));
            prop_assert!((soft_threshold(a, k) - soft_threshold(b, k)).abs() <= (a - b).abs() + 1e-15);
            prop_assert_eq!(soft_threshold(a, 0.0), a);
        }

        #[test]
        fn zero_solution_iff_lambda_dominates_gradient(seed in 0u64..1000, scale in 0.3f64..2.0) {
            let s = lasso_toy(25, 6, seed);
            let m = LossModel::quadratic(6);
            let lmax = lambda_max(&m, &s).unwrap();
            let lambda = lmax * scale;
            let sol = solve(&m, &s, &SolverConfig::with_lambda(lambda)).unwrap();
            let is_zero = sol.theta.iter().all(|t| *t == 0.0);
            if scale >= 1.0 + 1e-9 {
                prop_assert!(is_zero);
            } else if scale < 1.0 - 1e-6 {
                prop_assert!(!is_zero);
            }
        }
    }
}
