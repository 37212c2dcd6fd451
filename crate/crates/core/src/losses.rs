//! Loss families ρ_θ, their centering constants c_{i,θ} and componentwise
//! Lipschitz envelopes ψ_j(X_i, i).
//!
//! Parameter layout: for every kind except the mixture, θ ∈ ℝ^p multiplies a
//! p-dimensional covariate. For the Gaussian mixture regression with free
//! nuisance parameters θ = (β₁, …, β_r, π₁, …, π_r, σ₁, …, σ_r); with fixed
//! nuisance parameters θ = (β₁, …, β_r) only.

use std::io::Write;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::rng::replication_rng;
use crate::sample::{Generator, SampleSet};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const BOX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "link", rename_all = "kebab-case")]
pub enum GlmLink {
    /// Huber loss of the residual y − zᵀθ, κ-Lipschitz.
    Huber { kappa: f64 },
    /// Logistic negative log-likelihood, y ∈ [0, 1].
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Nuisance {
    /// π and σ held at the given values; θ holds the β blocks only.
    Fixed { pi: Vec<f64>, sigma: Vec<f64> },
    /// π and σ appended to θ after the β blocks.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub blocks: Vec<usize>,
    pub nuisance: Nuisance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossKind {
    /// (y − zᵀθ)².
    Quadratic,
    LipschitzGlm(GlmLink),
    /// Negative log-density of the Gaussian mixture regression.
    ExtendedGlmMixture(MixtureSpec),
    /// (y − Σ_j tanh(θ_j z_j))², a componentwise non-linear regression.
    GenericNonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum CenteringMode {
    None,
    /// c_{i,θ} = E ρ_θ(X_i) under `generator` at the fixed covariates z_i.
    /// Closed form for the quadratic loss with a linear Gaussian generator,
    /// otherwise a Monte Carlo mean over `draws` responses (common random
    /// numbers across θ, seeded per observation).
    Expectation {
        generator: Generator,
        #[serde(default = "default_centering_draws")]
        draws: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_centering_draws() -> usize {
    100_000
}

/// Per-coordinate bounds describing Θ. Infinite bounds are allowed for the
/// convex kinds only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterBox {
    pub fn unbounded(p: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; p],
            upper: vec![f64::INFINITY; p],
        }
    }

    pub fn symmetric(p: usize, bound: f64) -> Self {
        Self {
            lower: vec![-bound; p],
            upper: vec![bound; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|b| b.is_finite())
    }

    fn abs_bound(&self, j: usize) -> f64 {
        self.lower[j].abs().max(self.upper[j].abs())
    }
}

/// One observation X_i = (y_i, z_i).
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub y: f64,
    pub z: ArrayView1<'a, f64>,
}

impl<'a> Observation<'a> {
    pub fn new(y: f64, z: ArrayView1<'a, f64>) -> Self {
        Self { y, z }
    }

    pub fn from_sample(sample: &'a SampleSet, i: usize) -> Self {
        Self {
            y: sample.y[i],
            z: sample.z.row(i),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    kind: LossKind,
    dim: usize,
    blocks: Vec<usize>,
    centering: CenteringMode,
    bounds: ParameterBox,
}

/// Index ranges of the mixture parameters inside θ.
#[derive(Debug, Clone, Copy)]
struct MixtureLayout {
    r: usize,
    beta_len: usize,
    free: bool,
}

impl MixtureLayout {
    fn pi_offset(&self) -> usize {
        self.beta_len
    }
    fn sigma_offset(&self) -> usize {
        self.beta_len + self.r
    }
}

impl LossModel {
    pub fn new(kind: LossKind, bounds: ParameterBox, centering: CenteringMode) -> Result<Self> {
        let (dim, blocks) = match &kind {
            LossKind::ExtendedGlmMixture(spec) => {
                let beta_len: usize = spec.blocks.iter().sum();
                let dim = match spec.nuisance {
                    Nuisance::Free => beta_len + 2 * spec.blocks.len(),
                    Nuisance::Fixed { .. } => beta_len,
                };
                (dim, spec.blocks.clone())
            }
            _ => (bounds.dim(), vec![bounds.dim()]),
        };
        let model = Self {
            kind,
            dim,
            blocks,
            centering,
            bounds,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn quadratic(p: usize) -> Self {
        Self::new(LossKind::Quadratic, ParameterBox::unbounded(p), CenteringMode::None)
            .expect("unbounded quadratic model is always valid")
    }

    pub fn huber(p: usize, kappa: f64) -> Result<Self> {
        Self::new(
            LossKind::LipschitzGlm(GlmLink::Huber { kappa }),
            ParameterBox::unbounded(p),
            CenteringMode::None,
        )
    }

    pub fn logistic(p: usize) -> Self {
        Self::new(
            LossKind::LipschitzGlm(GlmLink::Logistic),
            ParameterBox::unbounded(p),
            CenteringMode::None,
        )
        .expect("unbounded logistic model is always valid")
    }

    pub fn generic_nonlinear(p: usize, bound: f64) -> Result<Self> {
        Self::new(
            LossKind::GenericNonlinear,
            ParameterBox::symmetric(p, bound),
            CenteringMode::None,
        )
    }

    /// Mixture regression with free (π, σ): β in [−beta_bound, beta_bound],
    /// σ in [sigma_min, sigma_max], π in [pi_min, 1] on the simplex.
    pub fn mixture_free(
        blocks: Vec<usize>,
        beta_bound: f64,
        sigma_min: f64,
        sigma_max: f64,
        pi_min: f64,
    ) -> Result<Self> {
        let r = blocks.len();
        let beta_len: usize = blocks.iter().sum();
        let mut lower = vec![-beta_bound; beta_len];
        let mut upper = vec![beta_bound; beta_len];
        let pi_lo = if r == 1 { 1.0 } else { pi_min };
        lower.extend(std::iter::repeat_n(pi_lo, r));
        upper.extend(std::iter::repeat_n(1.0, r));
        lower.extend(std::iter::repeat_n(sigma_min, r));
        upper.extend(std::iter::repeat_n(sigma_max, r));
        Self::new(
            LossKind::ExtendedGlmMixture(MixtureSpec {
                blocks,
                nuisance: Nuisance::Free,
            }),
            ParameterBox { lower, upper },
            CenteringMode::None,
        )
    }

    /// Mixture regression with π and σ held fixed; θ = β.
    pub fn mixture_fixed(
        blocks: Vec<usize>,
        pi: Vec<f64>,
        sigma: Vec<f64>,
        beta_bound: f64,
    ) -> Result<Self> {
        let beta_len: usize = blocks.iter().sum();
        Self::new(
            LossKind::ExtendedGlmMixture(MixtureSpec {
                blocks,
                nuisance: Nuisance::Fixed { pi, sigma },
            }),
            ParameterBox::symmetric(beta_len, beta_bound),
            CenteringMode::None,
        )
    }

    pub fn with_bounds(mut self, bounds: ParameterBox) -> Result<Self> {
        self.bounds = bounds;
        self.validate()?;
        Ok(self)
    }

    pub fn with_centering(mut self, centering: CenteringMode) -> Result<Self> {
        self.centering = centering;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        if self.blocks.is_empty() || self.blocks.iter().any(|b| *b == 0) {
            return Err(Error::InvalidModel("all block sizes must be >= 1".into()));
        }
        check_len("parameter box", self.dim, self.bounds.dim())?;
        check_len("parameter box upper", self.dim, self.bounds.upper.len())?;
        for (j, (lo, hi)) in self.bounds.lower.iter().zip(&self.bounds.upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidModel(format!("empty box in coordinate {j}")));
            }
        }
        let nonconvex = matches!(
            self.kind,
            LossKind::ExtendedGlmMixture(_) | LossKind::GenericNonlinear
        );
        if nonconvex && !self.bounds.is_bounded() {
            return Err(Error::InvalidModel(
                "non-convex models need a bounded parameter box".into(),
            ));
        }
        match &self.kind {
            LossKind::LipschitzGlm(GlmLink::Huber { kappa }) if !(*kappa > 0.0) => {
                return Err(Error::InvalidModel("Huber kappa must be positive".into()));
            }
            LossKind::ExtendedGlmMixture(spec) => {
                let r = spec.blocks.len();
                let beta_len: usize = spec.blocks.iter().sum();
                match &spec.nuisance {
                    Nuisance::Fixed { pi, sigma } => {
                        if pi.len() != r || sigma.len() != r {
                            return Err(Error::InvalidModel(
                                "fixed nuisance needs r weights and r scales".into(),
                            ));
                        }
                        if pi.iter().any(|p| *p < 0.0)
                            || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9
                        {
                            return Err(Error::InvalidModel(
                                "mixing weights must lie in the simplex".into(),
                            ));
                        }
                        if sigma.iter().any(|s| !(*s > 0.0)) {
                            return Err(Error::InvalidModel("scales must be positive".into()));
                        }
                    }
                    Nuisance::Free => {
                        let lo = &self.bounds.lower;
                        let hi = &self.bounds.upper;
                        let pi_lo = &lo[beta_len..beta_len + r];
                        let pi_hi = &hi[beta_len..beta_len + r];
                        if pi_lo.iter().any(|v| *v < 0.0) || pi_hi.iter().any(|v| *v > 1.0) {
                            return Err(Error::InvalidModel(
                                "mixing weight bounds must lie in [0, 1]".into(),
                            ));
                        }
                        if pi_lo.iter().sum::<f64>() > 1.0 + 1e-12
                            || pi_hi.iter().sum::<f64>() < 1.0 - 1e-12
                        {
                            return Err(Error::InvalidModel(
                                "mixing weight box does not meet the simplex".into(),
                            ));
                        }
                        if lo[beta_len + r..].iter().any(|s| !(*s > 0.0)) {
                            return Err(Error::InvalidModel(
                                "sigma_min must be positive".into(),
                            ));
                        }
                    }
                }
            }
            _ => {}
        }
        if let CenteringMode::Expectation {
            generator, draws, ..
        } = &self.centering
        {
            if generator.covariate_dim() != self.covariate_dim() {
                return Err(Error::InvalidModel(
                    "centering generator covariate dimension does not match the model".into(),
                ));
            }
            if *draws == 0 && !self.closed_form_centering() {
                return Err(Error::InvalidModel("centering needs at least one draw".into()));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn bounds(&self) -> &ParameterBox {
        &self.bounds
    }

    pub fn centering(&self) -> &CenteringMode {
        &self.centering
    }

    /// Width of the covariate vector z.
    pub fn covariate_dim(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn is_convex(&self) -> bool {
        matches!(self.kind, LossKind::Quadratic | LossKind::LipschitzGlm(_))
    }

    fn closed_form_centering(&self) -> bool {
        matches!(
            (&self.kind, &self.centering),
            (
                LossKind::Quadratic,
                CenteringMode::Expectation {
                    generator: Generator::LinearGaussian { .. },
                    ..
                }
            )
        )
    }

    /// True when θ ↦ ρ^c_θ(X_i, i) is affine for every i.
    pub fn centered_is_linear(&self) -> bool {
        self.closed_form_centering()
    }

    /// Coordinates holding mixing weights or scales (empty unless the model
    /// is a mixture with free nuisance parameters).
    pub fn nuisance_coordinates(&self) -> Vec<usize> {
        match self.mixture_layout() {
            Some(l) if l.free => (l.beta_len..l.beta_len + 2 * l.r).collect(),
            _ => Vec::new(),
        }
    }

    fn mixture_layout(&self) -> Option<MixtureLayout> {
        match &self.kind {
            LossKind::ExtendedGlmMixture(spec) => Some(MixtureLayout {
                r: spec.blocks.len(),
                beta_len: spec.blocks.iter().sum(),
                free: matches!(spec.nuisance, Nuisance::Free),
            }),
            _ => None,
        }
    }

    /// Checks dimension and box membership (including the simplex for free
    /// mixing weights).
    pub fn check_parameter(&self, theta: &[f64]) -> Result<()> {
        check_len("parameter", self.dim, theta.len())?;
        for (j, t) in theta.iter().enumerate() {
            let (lo, hi) = (self.bounds.lower[j], self.bounds.upper[j]);
            if !t.is_finite() || *t < lo - BOX_TOL || *t > hi + BOX_TOL {
                return Err(Error::OutsideBox {
                    coordinate: j,
                    value: *t,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        if let Some(l) = self.mixture_layout().filter(|l| l.free) {
            let s: f64 = theta[l.pi_offset()..l.pi_offset() + l.r].iter().sum();
            if (s - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidArgument(format!(
                    "mixing weights sum to {s}, not 1"
                )));
            }
        }
        Ok(())
    }

    fn check_observation(&self, x: &Observation) -> Result<()> {
        check_len("observation covariates", self.covariate_dim(), x.z.len())
    }

    /// Projects θ onto the feasible set. Returns true when θ moved.
    pub fn project(&self, theta: &mut [f64]) -> bool {
        let mut moved = false;
        for (j, t) in theta.iter_mut().enumerate() {
            let c = t.clamp(self.bounds.lower[j], self.bounds.upper[j]);
            if c != *t {
                moved = true;
                *t = c;
            }
        }
        if let Some(l) = self.mixture_layout().filter(|l| l.free) {
            let range = l.pi_offset()..l.pi_offset() + l.r;
            let s: f64 = theta[range.clone()].iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                let v = theta[range.clone()].to_vec();
                linalg::project_capped_simplex(
                    &v,
                    &self.bounds.lower[range.clone()],
                    &self.bounds.upper[range.clone()],
                    1.0,
                    &mut theta[range],
                );
                moved = true;
            }
        }
        moved
    }

    /// Uniform draw from the box (coordinates with infinite bounds are drawn
    /// from [−fallback, fallback]); free mixing weights are drawn from a flat
    /// Dirichlet and projected onto the box ∩ simplex.
    pub fn sample_parameter<R: Rng>(&self, rng: &mut R, fallback: f64) -> Vec<f64> {
        let mut theta: Vec<f64> = (0..self.dim)
            .map(|j| {
                let lo = self.bounds.lower[j].max(-fallback.max(self.bounds.lower[j].min(0.0)));
                let hi = self.bounds.upper[j].min(fallback.max(self.bounds.upper[j].max(0.0)));
                let lo = if lo.is_finite() { lo } else { -fallback };
                let hi = if hi.is_finite() { hi } else { fallback };
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect();
        if let Some(l) = self.mixture_layout().filter(|l| l.free) {
            let e: Vec<f64> = (0..l.r).map(|_| Exp1.sample(rng)).collect();
            let s: f64 = e.iter().sum();
            for (k, ek) in e.iter().enumerate() {
                theta[l.pi_offset() + k] = ek / s;
            }
            self.project(&mut theta);
        }
        theta
    }

    /// ρ_θ(X_i).
    pub fn eval_loss(&self, theta: &[f64], x: Observation, _i: usize) -> Result<f64> {
        self.check_parameter(theta)?;
        self.check_observation(&x)?;
        Ok(self.loss(theta, x.y, x.z))
    }

    /// ρ^c_θ(X_i, i) = ρ_θ(X_i) − c_{i,θ}.
    pub fn eval_centered(&self, theta: &[f64], x: Observation, i: usize) -> Result<f64> {
        self.check_parameter(theta)?;
        self.check_observation(&x)?;
        Ok(self.centered(theta, x.y, x.z, i))
    }

    /// c_{i,θ} for covariates z_i.
    pub fn centering_constant(&self, theta: &[f64], z: ArrayView1<f64>, i: usize) -> f64 {
        match &self.centering {
            CenteringMode::None => 0.0,
            CenteringMode::Expectation {
                generator,
                draws,
                seed,
            } => match (&self.kind, generator) {
                (LossKind::Quadratic, Generator::LinearGaussian { theta0, sigma }) => {
                    let d: f64 = z
                        .iter()
                        .zip(theta0.iter().zip(theta))
                        .map(|(zj, (a, b))| zj * (a - b))
                        .sum();
                    d * d + sigma * sigma
                }
                _ => {
                    let mut rng = replication_rng(*seed, i as u64);
                    let mut acc = 0.0;
                    for _ in 0..*draws {
                        let y = generator.draw_response(z, &mut rng);
                        acc += self.loss(theta, y, z);
                    }
                    acc / *draws as f64
                }
            },
        }
    }

    pub(crate) fn centered(&self, theta: &[f64], y: f64, z: ArrayView1<f64>, i: usize) -> f64 {
        self.loss(theta, y, z) - self.centering_constant(theta, z, i)
    }

    /// Unchecked ρ_θ(y, z).
    pub(crate) fn loss(&self, theta: &[f64], y: f64, z: ArrayView1<f64>) -> f64 {
        match &self.kind {
            LossKind::Quadratic => {
                let u = y - dot_view(z, theta);
                u * u
            }
            LossKind::LipschitzGlm(GlmLink::Huber { kappa }) => huber(y - dot_view(z, theta), *kappa),
            LossKind::LipschitzGlm(GlmLink::Logistic) => {
                let eta = dot_view(z, theta);
                softplus(eta) - y * eta
            }
            LossKind::GenericNonlinear => {
                let s: f64 = z.iter().zip(theta).map(|(zj, t)| (t * zj).tanh()).sum();
                (y - s) * (y - s)
            }
            LossKind::ExtendedGlmMixture(spec) => {
                let l = self.mixture_layout().unwrap();
                let mut logs = [0.0f64; 16];
                let mut heap;
                let a: &mut [f64] = if l.r <= 16 {
                    &mut logs[..l.r]
                } else {
                    heap = vec![0.0; l.r];
                    &mut heap
                };
                self.mixture_log_terms(spec, theta, y, z, a, None);
                -log_sum_exp(a)
            }
        }
    }

    /// a_k = log π_k + log φ_{σ_k}(u_k); optionally stores u_k.
    fn mixture_log_terms(
        &self,
        spec: &MixtureSpec,
        theta: &[f64],
        y: f64,
        z: ArrayView1<f64>,
        a: &mut [f64],
        mut resid: Option<&mut [f64]>,
    ) {
        let l = self.mixture_layout().unwrap();
        let mut offset = 0;
        for (k, &pk) in spec.blocks.iter().enumerate() {
            let fit: f64 = (offset..offset + pk).map(|j| theta[j] * z[j]).sum();
            offset += pk;
            let u = y - fit;
            let (pi_k, sigma_k) = match &spec.nuisance {
                Nuisance::Fixed { pi, sigma } => (pi[k], sigma[k]),
                Nuisance::Free => (theta[l.pi_offset() + k], theta[l.sigma_offset() + k]),
            };
            a[k] = pi_k.ln() - sigma_k.ln() - LN_SQRT_2PI - u * u / (2.0 * sigma_k * sigma_k);
            if let Some(r) = resid.as_deref_mut() {
                r[k] = u;
            }
        }
    }

    /// grad += scale · ∇_θ ρ_θ(y, z).
    pub(crate) fn add_gradient(
        &self,
        theta: &[f64],
        y: f64,
        z: ArrayView1<f64>,
        scale: f64,
        grad: &mut [f64],
    ) {
        match &self.kind {
            LossKind::Quadratic => {
                let u = y - dot_view(z, theta);
                let c = -2.0 * u * scale;
                for (g, zj) in grad.iter_mut().zip(z) {
                    *g += c * zj;
                }
            }
            LossKind::LipschitzGlm(GlmLink::Huber { kappa }) => {
                let u = y - dot_view(z, theta);
                let c = -u.clamp(-kappa, *kappa) * scale;
                for (g, zj) in grad.iter_mut().zip(z) {
                    *g += c * zj;
                }
            }
            LossKind::LipschitzGlm(GlmLink::Logistic) => {
                let eta = dot_view(z, theta);
                let c = (sigmoid(eta) - y) * scale;
                for (g, zj) in grad.iter_mut().zip(z) {
                    *g += c * zj;
                }
            }
            LossKind::GenericNonlinear => {
                let s: f64 = z.iter().zip(theta).map(|(zj, t)| (t * zj).tanh()).sum();
                let u = y - s;
                for ((g, zj), t) in grad.iter_mut().zip(z).zip(theta) {
                    let th = (t * zj).tanh();
                    *g += -2.0 * u * (1.0 - th * th) * zj * scale;
                }
            }
            LossKind::ExtendedGlmMixture(spec) => {
                let l = self.mixture_layout().unwrap();
                let mut a = vec![0.0; l.r];
                let mut u = vec![0.0; l.r];
                self.mixture_log_terms(spec, theta, y, z, &mut a, Some(&mut u));
                let lse = log_sum_exp(&a);
                let mut offset = 0;
                for (k, &pk) in spec.blocks.iter().enumerate() {
                    let w = (a[k] - lse).exp();
                    let (pi_k, sigma_k) = match &spec.nuisance {
                        Nuisance::Fixed { pi, sigma } => (pi[k], sigma[k]),
                        Nuisance::Free => {
                            (theta[l.pi_offset() + k], theta[l.sigma_offset() + k])
                        }
                    };
                    let s2 = sigma_k * sigma_k;
                    let c = -w * u[k] / s2 * scale;
                    for j in offset..offset + pk {
                        grad[j] += c * z[j];
                    }
                    offset += pk;
                    if l.free {
                        // φ_k / Σ π_l φ_l, finite even when π_k = 0
                        let log_phi = a[k] - pi_k.ln();
                        let ratio = if pi_k > 0.0 {
                            w / pi_k
                        } else {
                            (log_phi - lse).exp()
                        };
                        grad[l.pi_offset() + k] += -ratio * scale;
                        grad[l.sigma_offset() + k] +=
                            -w * (u[k] * u[k] / (s2 * sigma_k) - 1.0 / sigma_k) * scale;
                    }
                }
            }
        }
    }

    /// grad += scale · ∇_θ c_{i,θ}.
    pub(crate) fn add_centering_gradient(
        &self,
        theta: &[f64],
        z: ArrayView1<f64>,
        i: usize,
        scale: f64,
        grad: &mut [f64],
    ) {
        match &self.centering {
            CenteringMode::None => {}
            CenteringMode::Expectation {
                generator,
                draws,
                seed,
            } => match (&self.kind, generator) {
                (LossKind::Quadratic, Generator::LinearGaussian { theta0, .. }) => {
                    let d: f64 = z
                        .iter()
                        .zip(theta0.iter().zip(theta))
                        .map(|(zj, (a, b))| zj * (a - b))
                        .sum();
                    for (g, zj) in grad.iter_mut().zip(z) {
                        *g += -2.0 * d * zj * scale;
                    }
                }
                _ => {
                    let mut rng = replication_rng(*seed, i as u64);
                    let w = scale / *draws as f64;
                    for _ in 0..*draws {
                        let y = generator.draw_response(z, &mut rng);
                        self.add_gradient(theta, y, z, w, grad);
                    }
                }
            },
        }
    }

    /// grad += scale · ∇_θ ρ^c_θ(X_i, i).
    pub(crate) fn add_centered_gradient(
        &self,
        theta: &[f64],
        y: f64,
        z: ArrayView1<f64>,
        i: usize,
        scale: f64,
        grad: &mut [f64],
    ) {
        self.add_gradient(theta, y, z, scale, grad);
        self.add_centering_gradient(theta, z, i, -scale, grad);
    }

    /// Analytic sup over the box of |∂ρ_θ(y, z)/∂θ_j| for every j.
    fn analytic_envelope_row(&self, y: f64, z: ArrayView1<f64>, row: &mut [f64]) -> Result<()> {
        let b = &self.bounds;
        // sup over the box of |Σ_j θ_j z_j| restricted to the coordinates in `range`
        let linear_bound = |range: std::ops::Range<usize>| -> Result<f64> {
            let mut acc = 0.0;
            for j in range {
                if z[j] != 0.0 {
                    let bj = b.abs_bound(j);
                    if !bj.is_finite() {
                        return Err(Error::UnboundedGradient { coordinate: j });
                    }
                    acc += bj * z[j].abs();
                }
            }
            Ok(acc)
        };
        match &self.kind {
            LossKind::Quadratic => {
                let u = y.abs() + linear_bound(0..self.dim)?;
                for (r, zj) in row.iter_mut().zip(z) {
                    *r = 2.0 * u * zj.abs();
                }
            }
            LossKind::LipschitzGlm(GlmLink::Huber { kappa }) => {
                for (r, zj) in row.iter_mut().zip(z) {
                    *r = kappa * zj.abs();
                }
            }
            LossKind::LipschitzGlm(GlmLink::Logistic) => {
                let c = y.abs().max((1.0 - y).abs());
                for (r, zj) in row.iter_mut().zip(z) {
                    *r = c * zj.abs();
                }
            }
            LossKind::GenericNonlinear => {
                let s: f64 = (0..self.dim)
                    .map(|j| (b.abs_bound(j) * z[j].abs()).min(1.0))
                    .sum();
                let u = y.abs() + s;
                for (r, zj) in row.iter_mut().zip(z) {
                    *r = 2.0 * u * zj.abs();
                }
            }
            LossKind::ExtendedGlmMixture(spec) => {
                let l = self.mixture_layout().unwrap();
                let mut offset = 0;
                for (k, &pk) in spec.blocks.iter().enumerate() {
                    let u = y.abs() + linear_bound(offset..offset + pk)?;
                    let (sigma_min, pi_min) = match &spec.nuisance {
                        Nuisance::Fixed { pi, sigma } => (sigma[k], pi[k]),
                        Nuisance::Free => (
                            b.lower[l.sigma_offset() + k],
                            b.lower[l.pi_offset() + k],
                        ),
                    };
                    let c = u / (sigma_min * sigma_min);
                    for j in offset..offset + pk {
                        row[j] = c * z[j].abs();
                    }
                    offset += pk;
                    if l.free {
                        let pi_idx = l.pi_offset() + k;
                        row[pi_idx] = if b.lower[pi_idx] == b.upper[pi_idx] {
                            0.0
                        } else if pi_min > 0.0 {
                            1.0 / pi_min
                        } else {
                            return Err(Error::UnboundedGradient {
                                coordinate: pi_idx,
                            });
                        };
                        row[l.sigma_offset() + k] =
                            (u * u / sigma_min.powi(3)).max(1.0 / sigma_min);
                    }
                }
            }
        }
        Ok(())
    }

    /// Signed block envelope ψ_{j,k}(X_i, i) = B_k(X_i)·z_{ij} for the
    /// extended-GLM condition, where B_k bounds |∂ρ/∂η_k| over the box and
    /// η_k = β_kᵀz_k is the k-th linear predictor. Columns follow the β layout.
    pub fn block_envelope(&self, sample: &SampleSet) -> Result<Array2<f64>> {
        check_len("sample covariates", self.covariate_dim(), sample.covariate_dim())?;
        let n = sample.n();
        let q = self.covariate_dim();
        let mut out = Array2::zeros((n, q));
        for i in 0..n {
            let z = sample.z.row(i);
            let y = sample.y[i];
            match &self.kind {
                LossKind::LipschitzGlm(link) => {
                    let c = match link {
                        GlmLink::Huber { kappa } => *kappa,
                        GlmLink::Logistic => y.abs().max((1.0 - y).abs()),
                    };
                    for j in 0..q {
                        out[[i, j]] = c * z[j];
                    }
                }
                LossKind::ExtendedGlmMixture(spec) => {
                    let l = self.mixture_layout().unwrap();
                    let mut offset = 0;
                    for (k, &pk) in spec.blocks.iter().enumerate() {
                        let mut u = y.abs();
                        for j in offset..offset + pk {
                            u += self.bounds.abs_bound(j) * z[j].abs();
                        }
                        let sigma_min = match &spec.nuisance {
                            Nuisance::Fixed { sigma, .. } => sigma[k],
                            Nuisance::Free => self.bounds.lower[l.sigma_offset() + k],
                        };
                        let c = u / (sigma_min * sigma_min);
                        for j in offset..offset + pk {
                            out[[i, j]] = c * z[j];
                        }
                        offset += pk;
                    }
                }
                _ => {
                    return Err(Error::invalid(
                        "block envelopes are defined for GLM and mixture losses only",
                    ))
                }
            }
        }
        Ok(out)
    }
}

fn dot_view(z: ArrayView1<f64>, theta: &[f64]) -> f64 {
    z.iter().zip(theta).map(|(a, b)| a * b).sum()
}

fn huber(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        0.5 * u * u
    } else {
        kappa * u.abs() - 0.5 * kappa * kappa
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log Σ exp(a_k); −∞ entries are ignored.
pub fn log_sum_exp(a: &[f64]) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + a.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// ψ matrix of componentwise Lipschitz constants, n × p, with K_n = max_j ‖ψ_j‖_n.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEnvelope {
    psi: Array2<f64>,
    k_n: f64,
}

impl LipschitzEnvelope {
    pub fn new(psi: Array2<f64>) -> Result<Self> {
        if psi.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("envelope entries must be finite and nonnegative"));
        }
        let k_n = Self::max_column_norm(&psi);
        Ok(Self { psi, k_n })
    }

    fn max_column_norm(psi: &Array2<f64>) -> f64 {
        linalg::column_norms_n(psi.view())
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn psi(&self) -> &Array2<f64> {
        &self.psi
    }

    pub fn k_n(&self) -> f64 {
        self.k_n
    }

    pub fn n(&self) -> usize {
        self.psi.nrows()
    }

    pub fn p(&self) -> usize {
        self.psi.ncols()
    }

    /// True when the stored K_n matches a fresh recomputation.
    pub fn is_consistent(&self) -> bool {
        let fresh = Self::max_column_norm(&self.psi);
        (fresh - self.k_n).abs() <= 1e-12 * fresh.max(1.0)
    }

    /// CSV dump: header ψ_1..ψ_p, one row per observation.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record((1..=self.p()).map(|j| format!("ψ_{j}")))?;
        for row in self.psi.rows() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum EnvelopeMethod {
    /// Closed-form gradient bounds over the box.
    Analytic,
    /// Maximum of |∂ρ^c/∂θ_j| over a dense grid (or, above `max_points`, a
    /// uniform sample) of the box, inflated by `safety`.
    BoxSampling {
        points_per_axis: usize,
        safety: f64,
        max_points: usize,
        seed: u64,
    },
}

impl EnvelopeMethod {
    pub fn box_sampling(seed: u64) -> Self {
        EnvelopeMethod::BoxSampling {
            points_per_axis: 32,
            safety: 1.1,
            max_points: 1 << 16,
            seed,
        }
    }
}

/// Builds the componentwise Lipschitz envelope of ρ^c on `sample`.
pub fn build_envelope(
    model: &LossModel,
    sample: &SampleSet,
    method: EnvelopeMethod,
) -> Result<LipschitzEnvelope> {
    check_len("sample covariates", model.covariate_dim(), sample.covariate_dim())?;
    let n = sample.n();
    let p = model.dim();
    let mut psi = Array2::zeros((n, p));
    match method {
        EnvelopeMethod::Analytic => {
            let mut row = vec![0.0; p];
            for i in 0..n {
                let z = sample.z.row(i);
                let y = sample.y[i];
                match (&model.kind, &model.centering) {
                    (LossKind::Quadratic, CenteringMode::Expectation { generator: Generator::LinearGaussian { theta0, .. }, .. }) => {
                        // ρ^c_θ − ρ^c_θ̃ = −2 ε_i z_iᵀ(θ − θ̃) exactly
                        let eps = y - dot_view(z, theta0);
                        for j in 0..p {
                            row[j] = 2.0 * eps.abs() * z[j].abs();
                        }
                    }
                    (_, CenteringMode::None) => model.analytic_envelope_row(y, z, &mut row)?,
                    (_, CenteringMode::Expectation { generator, draws, seed }) => {
                        model.analytic_envelope_row(y, z, &mut row)?;
                        let mut extra = vec![0.0; p];
                        let mut acc = vec![0.0; p];
                        let mut rng = replication_rng(*seed, i as u64);
                        for _ in 0..*draws {
                            let yd = generator.draw_response(z, &mut rng);
                            model.analytic_envelope_row(yd, z, &mut extra)?;
                            for j in 0..p {
                                acc[j] += extra[j];
                            }
                        }
                        for j in 0..p {
                            row[j] += acc[j] / *draws as f64;
                        }
                    }
                }
                psi.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
            }
        }
        EnvelopeMethod::BoxSampling {
            points_per_axis,
            safety,
            max_points,
            seed,
        } => {
            if points_per_axis < 2 || !(safety >= 1.0) {
                return Err(Error::invalid("box sampling needs >= 2 points per axis and safety >= 1"));
            }
            for j in 0..p {
                if !(model.bounds.lower[j].is_finite() && model.bounds.upper[j].is_finite()) {
                    return Err(Error::UnboundedGradient { coordinate: j });
                }
            }
            let points = box_points(model, points_per_axis, max_points, seed);
            let mut grad = vec![0.0; p];
            for i in 0..n {
                let z = sample.z.row(i);
                let y = sample.y[i];
                for theta in &points {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    model.add_centered_gradient(theta, y, z, i, 1.0, &mut grad);
                    for j in 0..p {
                        if !grad[j].is_finite() {
                            return Err(Error::UnboundedGradient { coordinate: j });
                        }
                        psi[[i, j]] = f64::max(psi[[i, j]], grad[j].abs());
                    }
                }
            }
            psi.mapv_inplace(|v| v * safety);
        }
    }
    LipschitzEnvelope::new(psi)
}

/// Grid (or uniform sample) of feasible points in the model box.
fn box_points(model: &LossModel, per_axis: usize, max_points: usize, seed: u64) -> Vec<Vec<f64>> {
    let b = &model.bounds;
    let free: Vec<usize> = (0..model.dim).filter(|&j| b.upper[j] > b.lower[j]).collect();
    let grid_size = (per_axis as f64).powi(free.len() as i32);
    let mut pts = Vec::new();
    if grid_size <= max_points as f64 {
        let total = grid_size as usize;
        for mut idx in 0..total.max(1) {
            let mut theta = b.lower.clone();
            for &j in &free {
                let k = idx % per_axis;
                idx /= per_axis;
                theta[j] = b.lower[j] + (b.upper[j] - b.lower[j]) * k as f64 / (per_axis - 1) as f64;
            }
            model.project(&mut theta);
            pts.push(theta);
        }
    } else {
        let mut rng = replication_rng(seed, 0);
        for _ in 0..max_points {
            pts.push(model.sample_parameter(&mut rng, 1.0));
        }
        // box corners along each axis keep the extreme values in the sample
        for &j in &free {
            for edge in [b.lower[j], b.upper[j]] {
                let mut theta: Vec<f64> = (0..model.dim).map(|k| 0.5 * (b.lower[k] + b.upper[k])).collect();
                theta[j] = edge;
                model.project(&mut theta);
                pts.push(theta);
            }
        }
    }
    pts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// max over pairs and i of |ρ^c_θ − ρ^c_θ̃| − Σ_j |θ_j − θ̃_j| ψ_j(X_i, i).
    pub max_violation: f64,
    pub trials: usize,
    pub worst_trial: Option<usize>,
    pub worst_observation: Option<usize>,
}

impl EnvelopeReport {
    pub fn verified(&self) -> bool {
        self.max_violation <= 1e-10
    }
}

/// Lipschitz envelope gap for one pair at observation i (nonpositive when the
/// envelope dominates).
pub fn envelope_gap(
    model: &LossModel,
    sample: &SampleSet,
    envelope: &LipschitzEnvelope,
    theta: &[f64],
    theta_tilde: &[f64],
    i: usize,
) -> f64 {
    let z = sample.z.row(i);
    let y = sample.y[i];
    let lhs = (model.centered(theta, y, z, i) - model.centered(theta_tilde, y, z, i)).abs();
    let rhs: f64 = theta
        .iter()
        .zip(theta_tilde)
        .zip(envelope.psi.row(i))
        .map(|((a, b), w)| (a - b).abs() * w)
        .sum();
    lhs - rhs
}

/// Samples `trials` parameter pairs uniformly in the box and reports the
/// largest envelope violation. Unbounded coordinates are sampled in [−1, 1].
pub fn verify_envelope(
    model: &LossModel,
    sample: &SampleSet,
    envelope: &LipschitzEnvelope,
    trials: usize,
    seed: u64,
) -> Result<EnvelopeReport> {
    check_len("envelope rows", sample.n(), envelope.n())?;
    check_len("envelope columns", model.dim(), envelope.p())?;
    let per_trial = crate::rng::map_replications(trials, |t| {
        let mut rng = replication_rng(seed, t as u64);
        let a = model.sample_parameter(&mut rng, 1.0);
        let b = model.sample_parameter(&mut rng, 1.0);
        (0..sample.n())
            .map(|i| (envelope_gap(model, sample, envelope, &a, &b, i), i))
            .fold((f64::NEG_INFINITY, 0), |acc, x| if x.0 > acc.0 { x } else { acc })
    });
    let mut report = EnvelopeReport {
        max_violation: f64::NEG_INFINITY,
        trials,
        worst_trial: None,
        worst_observation: None,
    };
    for (t, (gap, i)) in per_trial.into_iter().enumerate() {
        if gap > report.max_violation {
            report.max_violation = gap;
            report.worst_trial = Some(t);
            report.worst_observation = Some(i);
        }
    }
    Ok(report)
}
