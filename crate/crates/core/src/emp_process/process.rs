use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::losses::LossModel;
use crate::rng::fill_gaussian;
use crate::sample::SampleSet;

/// Which convex set the ball is intersected with. Θ is a coordinate box, so
/// its convex hull coincides with it and both variants give the same set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Restriction {
    #[default]
    Parameter,
    ConvexHull,
}

/// Θ_M(θ*) = {θ ∈ Θ_* : ‖θ − θ*‖₁ ≤ M}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default)]
    pub restriction: Restriction,
}

impl BallSpec {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid("ball radius must be positive and finite"));
        }
        Ok(Self {
            center,
            radius,
            restriction: Restriction::Parameter,
        })
    }

    pub fn origin(p: usize, radius: f64) -> Result<Self> {
        Self::new(vec![0.0; p], radius)
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        Self::new(self.center.clone(), radius)
    }
}

/// Increments g_i(θ) = ρ^c_θ(X_i, i) − ρ^c_θ*(X_i, i) of a loss class on a
/// fixed sample. Weighted sums Σ_i w_i g_i(θ) give both the symmetrized
/// process (w = ε/n) and the centered process Y (w = 1/n).
pub trait IncrementProcess: Sync {
    fn n(&self) -> usize;
    fn dim(&self) -> usize;
    fn center(&self) -> &[f64];
    /// Box bounds on θ, `None` when unconstrained.
    fn bounds(&self) -> Option<(&[f64], &[f64])>;
    /// Coordinates the search may move (others stay at the center).
    fn free_coordinates(&self) -> Option<&[bool]> {
        None
    }
    fn weighted_value(&self, theta: &[f64], w: &[f64]) -> f64;
    /// Writes ∇_θ Σ_i w_i g_i(θ) into `grad` and returns the value.
    fn weighted_gradient(&self, theta: &[f64], w: &[f64], grad: &mut [f64]) -> f64;
    /// ψ with g_i(θ) = Σ_j ψ_ij (θ_j − θ*_j), when the class is linear.
    fn linear_coefficients(&self) -> Option<ArrayView2<'_, f64>> {
        None
    }
    /// sup over the ball of ‖g(θ)‖_n, or an upper bound for it.
    fn radius_bound(&self, ball: &BallSpec) -> f64;
}

/// g_i(θ) = Σ_j ψ_ij (θ_j − θ*_j).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProcess {
    coef: Array2<f64>,
    center: Vec<f64>,
    bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl LinearProcess {
    pub fn new(coef: Array2<f64>) -> Self {
        let p = coef.ncols();
        Self {
            coef,
            center: vec![0.0; p],
            bounds: None,
        }
    }

    pub fn with_center(mut self, center: Vec<f64>) -> Result<Self> {
        check_len("ball center", self.coef.ncols(), center.len())?;
        self.center = center;
        Ok(self)
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("lower bounds", self.coef.ncols(), lower.len())?;
        check_len("upper bounds", self.coef.ncols(), upper.len())?;
        self.bounds = Some((lower, upper));
        Ok(self)
    }

    pub fn coef(&self) -> &Array2<f64> {
        &self.coef
    }

    /// Linearization of a model whose centered loss is affine in θ.
    pub fn from_model(model: &LossModel, sample: &SampleSet, center: Vec<f64>) -> Result<Self> {
        if !model.centered_is_linear() {
            return Err(Error::invalid("centered loss is not affine in θ"));
        }
        model.check_parameter(&center)?;
        let (n, p) = (sample.n(), model.dim());
        let mut coef = Array2::zeros((n, p));
        let mut g = vec![0.0; p];
        for i in 0..n {
            g.iter_mut().for_each(|v| *v = 0.0);
            model.add_centered_gradient(&center, sample.y[i], sample.z.row(i), i, 1.0, &mut g);
            coef.row_mut(i).assign(&ArrayView1::from(&g[..]));
        }
        let b = model.bounds();
        let bounded = b.lower.iter().chain(&b.upper).any(|v| v.is_finite());
        let lp = Self::new(coef).with_center(center)?;
        if bounded {
            lp.with_bounds(b.lower.clone(), b.upper.clone())
        } else {
            Ok(lp)
        }
    }

    /// v = wᵀψ, the gradient of the weighted process.
    pub fn weighted_coefficients(&self, w: &[f64]) -> Array1<f64> {
        self.coef.t().dot(&ArrayView1::from(w))
    }
}

impl IncrementProcess for LinearProcess {
    fn n(&self) -> usize {
        self.coef.nrows()
    }
    fn dim(&self) -> usize {
        self.coef.ncols()
    }
    fn center(&self) -> &[f64] {
        &self.center
    }
    fn bounds(&self) -> Option<(&[f64], &[f64])> {
        self.bounds.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()))
    }
    fn weighted_value(&self, theta: &[f64], w: &[f64]) -> f64 {
        let v = self.weighted_coefficients(w);
        v.iter()
            .zip(theta.iter().zip(&self.center))
            .map(|(a, (t, c))| a * (t - c))
            .sum()
    }
    fn weighted_gradient(&self, theta: &[f64], w: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.weighted_coefficients(w);
        grad.copy_from_slice(v.as_slice().expect("contiguous"));
        v.iter()
            .zip(theta.iter().zip(&self.center))
            .map(|(a, (t, c))| a * (t - c))
            .sum()
    }
    fn linear_coefficients(&self) -> Option<ArrayView2<'_, f64>> {
        Some(self.coef.view())
    }
    fn radius_bound(&self, ball: &BallSpec) -> f64 {
        ball.radius
            * linalg::column_norms_n(self.coef.view())
                .into_iter()
                .fold(0.0, f64::max)
    }
}

/// Increments of a loss model on a fixed sample.
#[derive(Debug, Clone)]
pub struct LossProcess {
    model: LossModel,
    sample: SampleSet,
    center: Vec<f64>,
    base: Vec<f64>,
    free: Vec<bool>,
    envelope_k_n: Option<f64>,
}

impl LossProcess {
    /// Mixing weights and scales of a free-nuisance mixture are held at the
    /// center; the search moves the remaining coordinates.
    pub fn new(model: LossModel, sample: SampleSet, center: Vec<f64>) -> Result<Self> {
        model.check_parameter(&center)?;
        check_len("sample covariates", model.covariate_dim(), sample.covariate_dim())?;
        let base = (0..sample.n())
            .map(|i| model.centered(&center, sample.y[i], sample.z.row(i), i))
            .collect();
        let mut free = vec![true; model.dim()];
        for j in model.nuisance_coordinates() {
            free[j] = false;
        }
        Ok(Self {
            model,
            sample,
            center,
            base,
            free,
            envelope_k_n: None,
        })
    }

    /// Uses K_n of a Lipschitz envelope for `radius_bound` (M·K_n).
    pub fn with_envelope_k_n(mut self, k_n: f64) -> Self {
        self.envelope_k_n = Some(k_n);
        self
    }

    pub fn model(&self) -> &LossModel {
        &self.model
    }

    pub fn sample(&self) -> &SampleSet {
        &self.sample
    }

    /// g_i(θ) for every i.
    pub fn increments(&self, theta: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self
                .model
                .centered(theta, self.sample.y[i], self.sample.z.row(i), i)
                - self.base[i];
        }
    }
}

impl IncrementProcess for LossProcess {
    fn n(&self) -> usize {
        self.sample.n()
    }
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn center(&self) -> &[f64] {
        &self.center
    }
    fn bounds(&self) -> Option<(&[f64], &[f64])> {
        let b = self.model.bounds();
        Some((&b.lower, &b.upper))
    }
    fn free_coordinates(&self) -> Option<&[bool]> {
        Some(&self.free)
    }
    fn weighted_value(&self, theta: &[f64], w: &[f64]) -> f64 {
        (0..self.n())
            .filter(|&i| w[i] != 0.0)
            .map(|i| {
                w[i] * (self
                    .model
                    .centered(theta, self.sample.y[i], self.sample.z.row(i), i)
                    - self.base[i])
            })
            .sum()
    }
    fn weighted_gradient(&self, theta: &[f64], w: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for i in 0..self.n() {
            if w[i] == 0.0 {
                continue;
            }
            let (y, z) = (self.sample.y[i], self.sample.z.row(i));
            value += w[i] * (self.model.centered(theta, y, z, i) - self.base[i]);
            self.model.add_centered_gradient(theta, y, z, i, w[i], grad);
        }
        value
    }
    fn radius_bound(&self, ball: &BallSpec) -> f64 {
        match self.envelope_k_n {
            Some(k) => ball.radius * k,
            None => f64::INFINITY,
        }
    }
}

/// Fresh realizations of an increment process (a new sample each call).
pub trait ProcessGenerator: Sync {
    type Process: IncrementProcess;
    fn generate(&self, rng: &mut ChaCha8Rng) -> Result<Self::Process>;
    /// sup over the ball of the population norm ‖ρ^c_θ − ρ^c_θ*‖.
    fn population_radius(&self, ball: &BallSpec) -> f64;
}

/// Quadratic loss, fixed design, Gaussian noise, expectation centering:
/// g_i(θ) = −2 ε_i z_iᵀ(θ − θ*).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianDesign {
    pub z: Array2<f64>,
    pub sigma: f64,
}

impl ProcessGenerator for LinearGaussianDesign {
    type Process = LinearProcess;
    fn generate(&self, rng: &mut ChaCha8Rng) -> Result<LinearProcess> {
        let n = self.z.nrows();
        let mut eps = vec![0.0; n];
        fill_gaussian(rng, &mut eps);
        let mut coef = self.z.clone();
        for (i, mut row) in coef.rows_mut().into_iter().enumerate() {
            let c = -2.0 * self.sigma * eps[i];
            row.mapv_inplace(|v| v * c);
        }
        Ok(LinearProcess::new(coef))
    }
    fn population_radius(&self, ball: &BallSpec) -> f64 {
        let k = linalg::column_norms_n(self.z.view())
            .into_iter()
            .fold(0.0, f64::max);
        2.0 * self.sigma * ball.radius * k
    }
}

/// A loss that does not depend on θ: every increment is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantLoss {
    pub n: usize,
    pub p: usize,
}

impl ProcessGenerator for ConstantLoss {
    type Process = LinearProcess;
    fn generate(&self, _rng: &mut ChaCha8Rng) -> Result<LinearProcess> {
        Ok(LinearProcess::new(Array2::zeros((self.n, self.p))))
    }
    fn population_radius(&self, _ball: &BallSpec) -> f64 {
        0.0
    }
}
