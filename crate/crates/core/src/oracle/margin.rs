use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::losses::LossModel;
use crate::rng::{map_replications, replication_rng};
use crate::sample::Generator;
use crate::stats::mean_and_se;

/// Margin function G: strictly convex, G(0) = 0, G ≥ 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MarginFunction {
    /// G(u) = c u².
    Quadratic { c: f64 },
    /// G(u) = c u^k with k > 1.
    Power { c: f64, exponent: f64 },
    /// Piecewise-linear interpolation of (u_k, G_k), u_0 = 0, continued
    /// beyond the last knot with the last slope.
    Tabulated { u: Vec<f64>, g: Vec<f64> },
}

impl MarginFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Quadratic { c } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(Error::invalid("quadratic margin needs c > 0"));
                }
            }
            Self::Power { c, exponent } => {
                if !(*c > 0.0 && *exponent > 1.0 && c.is_finite() && exponent.is_finite()) {
                    return Err(Error::invalid("power margin needs c > 0 and exponent > 1"));
                }
            }
            Self::Tabulated { u, g } => {
                if u.len() != g.len() || u.len() < 3 {
                    return Err(Error::invalid("tabulated margin needs >= 3 aligned knots"));
                }
                if u[0] != 0.0 || g[0] != 0.0 {
                    return Err(Error::invalid("tabulated margin must start at G(0) = 0"));
                }
                if u.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::invalid("tabulated margin needs increasing knots and G >= 0"));
                }
                let slopes: Vec<f64> = (1..u.len())
                    .map(|k| (g[k] - g[k - 1]) / (u[k] - u[k - 1]))
                    .collect();
                if slopes.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::invalid("tabulated margin is not strictly convex"));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Self::Quadratic { c } => c * u * u,
            Self::Power { c, exponent } => c * u.powf(*exponent),
            Self::Tabulated { u: knots, g } => {
                let last = knots.len() - 1;
                let k = knots.partition_point(|x| *x <= u).clamp(1, last);
                let slope = (g[k] - g[k - 1]) / (knots[k] - knots[k - 1]);
                g[k - 1] + slope * (u - knots[k - 1])
            }
        }
    }

    /// lim G(u)/u as u → ∞ (∞ for superlinear G).
    fn asymptotic_slope(&self) -> f64 {
        match self {
            Self::Tabulated { u, g } => {
                let k = u.len() - 1;
                (g[k] - g[k - 1]) / (u[k] - u[k - 1])
            }
            _ => f64::INFINITY,
        }
    }
}

/// H(v) = sup_{u ≥ 0} {uv − G(u)}, with the exact v²/(4c) for G = cu².
pub fn convex_conjugate(g: &MarginFunction, v: f64) -> Result<f64> {
    match g {
        MarginFunction::Quadratic { c } => {
            g.validate()?;
            if !(v >= 0.0) {
                return Err(Error::invalid("the conjugate is taken at v >= 0"));
            }
            Ok(v * v / (4.0 * c))
        }
        _ => convex_conjugate_numeric(g, v),
    }
}

/// H(v) by a bracketing grid followed by golden-section refinement of the
/// concave map u ↦ uv − G(u).
pub fn convex_conjugate_numeric(g: &MarginFunction, v: f64) -> Result<f64> {
    g.validate()?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::invalid("the conjugate is taken at finite v >= 0"));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    if v >= g.asymptotic_slope() {
        return Err(Error::UnboundedConjugate { v });
    }
    let f = |u: f64| u * v - g.eval(u);
    let mut hi = 1.0;
    while f(2.0 * hi) > f(hi) {
        hi *= 2.0;
        if hi > 1e15 {
            return Err(Error::UnboundedConjugate { v });
        }
    }
    hi *= 2.0;
    const GRID: usize = 64;
    let step = hi / GRID as f64;
    let best = (0..=GRID)
        .map(|k| (k, f(k as f64 * step)))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
        .0;
    let mut a = (best.saturating_sub(1)) as f64 * step;
    let mut b = ((best + 1).min(GRID)) as f64 * step;
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if b - a <= 1e-15 * b.max(1e-300) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        }
    }
    let candidates = [f(a), f(b), f1, f2, f(best as f64 * step), 0.0];
    Ok(candidates.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// The function H entering the oracle bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConjugateSpec {
    /// H(v) = c v² in closed form.
    Quadratic { c: f64 },
    /// H = conjugate of G, always evaluated numerically.
    ConjugateOf { margin: MarginFunction },
}

impl ConjugateSpec {
    pub fn eval(&self, v: f64) -> Result<f64> {
        match self {
            Self::Quadratic { c } => {
                if !(*c > 0.0) || !(v >= 0.0) {
                    return Err(Error::invalid("H(v) = c v² needs c > 0 and v >= 0"));
                }
                Ok(c * v * v)
            }
            Self::ConjugateOf { margin } => convex_conjugate_numeric(margin, v),
        }
    }
}

/// max over a grid of u·v − G(u) − H(v); nonpositive when Fenchel holds.
pub fn fenchel_excess(g: &MarginFunction, us: &[f64], vs: &[f64]) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for &v in vs {
        let h = convex_conjugate_numeric(g, v)?;
        for &u in us {
            worst = worst.max(u * v - g.eval(u) - h);
        }
    }
    Ok(worst)
}

/// The norm τ of the margin condition and of the effective sparsity.
#[derive(Debug, Clone, PartialEq)]
pub enum TauNorm {
    /// ‖θ‖₂ on ℝ^dim.
    Euclidean { dim: usize },
    /// ‖Rθ‖₂ for a matrix root R (k×p).
    Weighted { root: Array2<f64> },
    /// ‖Zθ‖_n for a design Z (n×p).
    Design { z: Array2<f64> },
}

impl TauNorm {
    pub fn dim(&self) -> usize {
        match self {
            Self::Euclidean { dim } => *dim,
            Self::Weighted { root } => root.ncols(),
            Self::Design { z } => z.ncols(),
        }
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        let t = ArrayView1::from(theta);
        match self {
            Self::Euclidean { .. } => t.dot(&t).sqrt(),
            Self::Weighted { root } => {
                let v = root.dot(&t);
                v.dot(&v).sqrt()
            }
            Self::Design { z } => linalg::norm_n(z.dot(&t).view()),
        }
    }

    /// Q with τ(θ)² = θᵀQθ.
    pub fn gram(&self) -> Array2<f64> {
        match self {
            Self::Euclidean { dim } => Array2::eye(*dim),
            Self::Weighted { root } => root.t().dot(root),
            Self::Design { z } => z.t().dot(z) / z.nrows() as f64,
        }
    }
}

/// Excess risk P(ρ_θ − ρ_θ⁰) over a fixed design with responses from a
/// generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessRisk {
    pub value: f64,
    pub std_error: f64,
    pub exact: bool,
    /// Monte Carlo SE above 1% of |value|.
    pub flagged: bool,
}

/// Closed form for the quadratic loss under a linear Gaussian generator,
/// Monte Carlo with `draws` paired responses otherwise.
pub fn excess_risk(
    model: &LossModel,
    z: ArrayView2<f64>,
    generator: &Generator,
    theta: &[f64],
    theta0: &[f64],
    draws: usize,
    seed: u64,
) -> Result<ExcessRisk> {
    model.check_parameter(theta)?;
    model.check_parameter(theta0)?;
    check_len("design columns", model.covariate_dim(), z.ncols())?;
    if let (crate::losses::LossKind::Quadratic, Generator::LinearGaussian { theta0: truth, .. }) =
        (model.kind(), generator)
    {
        check_len("generator coefficients", z.ncols(), truth.len())?;
        let n = z.nrows() as f64;
        let diff = |a: &[f64]| {
            let d: Vec<f64> = a.iter().zip(truth).map(|(x, y)| x - y).collect();
            let r = z.dot(&ArrayView1::from(&d[..]));
            r.dot(&r) / n
        };
        return Ok(ExcessRisk {
            value: diff(theta) - diff(theta0),
            std_error: 0.0,
            exact: true,
            flagged: false,
        });
    }
    if draws < 2 {
        return Err(Error::invalid("Monte Carlo excess risk needs at least 2 draws"));
    }
    const CHUNK: usize = 4096;
    let chunks = draws.div_ceil(CHUNK);
    let n = z.nrows();
    let parts = map_replications(chunks, |c| {
        let mut rng = replication_rng(seed, c as u64);
        let count = CHUNK.min(draws - c * CHUNK);
        (0..count)
            .map(|k| {
                let i = (c * CHUNK + k) % n;
                let zi = z.row(i);
                let y = generator.draw_response(zi, &mut rng);
                model.loss(theta, y, zi) - model.loss(theta0, y, zi)
            })
            .collect::<Vec<f64>>()
    });
    let all: Vec<f64> = parts.into_iter().flatten().collect();
    let (value, std_error) = mean_and_se(&all);
    Ok(ExcessRisk {
        value,
        std_error,
        exact: false,
        flagged: std_error > 0.01 * value.abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginFit {
    /// min over probes of E(θ;θ⁰)/τ(θ − θ⁰)², the fitted c of G(u) = cu².
    pub c: f64,
    pub probes: usize,
    /// Probe attaining the minimum.
    pub witness: Vec<f64>,
    /// All probe ratios were positive.
    pub holds: bool,
    pub max_relative_se: f64,
}

/// Empirical margin constant over `probes` points of the ℓ1 ball of radius
/// `radius` around θ⁰ (clipped to the parameter box).
#[allow(clippy::too_many_arguments)]
pub fn margin_fit(
    model: &LossModel,
    z: ArrayView2<f64>,
    generator: &Generator,
    theta0: &[f64],
    tau: &TauNorm,
    radius: f64,
    probes: usize,
    draws: usize,
    seed: u64,
) -> Result<MarginFit> {
    if probes == 0 || !(radius > 0.0) {
        return Err(Error::invalid("margin fit needs probes > 0 and a positive radius"));
    }
    check_len("tau dimension", model.dim(), tau.dim())?;
    let free: Vec<bool> = {
        let mut f = vec![true; model.dim()];
        for j in model.nuisance_coordinates() {
            f[j] = false;
        }
        f
    };
    let mut rng = replication_rng(seed, 0);
    let mut best = (f64::INFINITY, theta0.to_vec());
    let mut max_rel = 0.0f64;
    let mut done = 0;
    while done < probes {
        let mut dir: Vec<f64> = (0..model.dim())
            .map(|j| if free[j] { rng.random::<f64>() * 2.0 - 1.0 } else { 0.0 })
            .collect();
        let l1 = linalg::l1_norm(&dir);
        if l1 == 0.0 {
            continue;
        }
        let scale = radius * rng.random::<f64>().max(1e-3) / l1;
        dir.iter_mut().for_each(|d| *d *= scale);
        let mut theta: Vec<f64> = theta0.iter().zip(&dir).map(|(a, b)| a + b).collect();
        model.project(&mut theta);
        let diff: Vec<f64> = theta.iter().zip(theta0).map(|(a, b)| a - b).collect();
        let t = tau.eval(&diff);
        if t == 0.0 {
            continue;
        }
        let e = excess_risk(model, z, generator, &theta, theta0, draws, seed.wrapping_add(1 + done as u64))?;
        if e.value != 0.0 {
            max_rel = max_rel.max(e.std_error / e.value.abs());
        }
        let ratio = e.value / (t * t);
        if ratio < best.0 {
            best = (ratio, theta);
        }
        done += 1;
    }
    Ok(MarginFit {
        c: best.0,
        probes,
        witness: best.1,
        holds: best.0 > 0.0,
        max_relative_se: max_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::gaussian_design;
    use approx::assert_relative_eq;

    #[test]
    fn conjugate_examples() {
        let g1 = MarginFunction::Quadratic { c: 1.0 };
        assert_relative_eq!(convex_conjugate(&g1, 2.0).unwrap(), 1.0);
        assert_relative_eq!(convex_conjugate_numeric(&g1, 2.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(convex_conjugate_numeric(&g1, 0.0).unwrap(), 0.0);
        let g2 = MarginFunction::Quadratic { c: 0.5 };
        assert_relative_eq!(convex_conjugate_numeric(&g2, 3.0).unwrap(), 4.5, epsilon = 1e-12);
    }

    #[test]
    fn numeric_conjugate_of_power_matches_closed_form() {
        // G = u³ gives H(v) = 2 (v/3)^{3/2}
        let g = MarginFunction::Power { c: 1.0, exponent: 3.0 };
        for v in [0.1, 1.0, 7.5, 40.0] {
            let h = convex_conjugate_numeric(&g, v).unwrap();
            assert_relative_eq!(h, 2.0 * (v / 3.0f64).powf(1.5), max_relative = 1e-10);
        }
    }

    #[test]
    fn tabulated_margin_has_bounded_conjugate_domain() {
        let g = MarginFunction::Tabulated {
            u: vec![0.0, 1.0, 2.0],
            g: vec![0.0, 1.0, 3.0],
        };
        // slopes 1 and 2: H(1.5) = max(1.5 − 1, 3 − 3, 0) = 0.5
        assert_relative_eq!(convex_conjugate_numeric(&g, 1.5).unwrap(), 0.5, epsilon = 1e-12);
        assert!(matches!(
            convex_conjugate_numeric(&g, 2.5),
            Err(Error::UnboundedConjugate { .. })
        ));
        let bad = MarginFunction::Tabulated {
            u: vec![0.0, 1.0, 2.0],
            g: vec![0.0, 2.0, 3.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fenchel_holds_on_a_grid() {
        let g = MarginFunction::Quadratic { c: 2.0 };
        let grid: Vec<f64> = (0..50).map(|k| k as f64 * 0.2).collect();
        assert!(fenchel_excess(&g, &grid, &grid).unwrap() <= 1e-9);
    }

    #[test]
    fn conjugate_is_convex_nondecreasing() {
        let g = MarginFunction::Power { c: 0.7, exponent: 1.6 };
        let hs: Vec<f64> = (0..40)
            .map(|k| convex_conjugate_numeric(&g, k as f64 * 0.25).unwrap())
            .collect();
        assert_eq!(hs[0], 0.0);
        assert!(hs.windows(2).all(|w| w[1] >= w[0]));
        assert!(hs.windows(3).all(|w| w[2] - 2.0 * w[1] + w[0] >= -1e-9));
    }

    fn linear_setup() -> (LossModel, Array2<f64>, Generator) {
        let z = gaussian_design(40, 3, 5, true);
        let generator = Generator::LinearGaussian {
            theta0: vec![1.0, 0.0, -0.5],
            sigma: 1.0,
        };
        (LossModel::quadratic(3), z, generator)
    }

    #[test]
    fn quadratic_excess_risk_is_design_norm() {
        let (model, z, generator) = linear_setup();
        let t0 = vec![1.0, 0.0, -0.5];
        let e = excess_risk(&model, z.view(), &generator, &t0, &t0, 0, 0).unwrap();
        assert_eq!(e.value, 0.0);
        let t1 = vec![2.0, 0.0, -0.5];
        let e = excess_risk(&model, z.view(), &generator, &t1, &t0, 0, 0).unwrap();
        // ‖z_1‖_n = 1 after normalization
        assert_relative_eq!(e.value, 1.0, epsilon = 1e-12);
        assert!(e.exact);
    }

    #[test]
    fn monte_carlo_excess_risk_agrees_with_closed_form() {
        let (_, z, generator) = linear_setup();
        let model = LossModel::huber(3, 100.0).unwrap();
        // with κ huge the Huber loss is half the quadratic one on this data
        let t0 = vec![1.0, 0.0, -0.5];
        let t1 = vec![1.3, 0.2, -0.5];
        let mc = excess_risk(&model, z.view(), &generator, &t1, &t0, 200_000, 4).unwrap();
        let exact = excess_risk(&LossModel::quadratic(3), z.view(), &generator, &t1, &t0, 0, 0).unwrap();
        assert!(!mc.exact);
        assert!((mc.value - 0.5 * exact.value).abs() < 4.0 * mc.std_error + 1e-3, "{mc:?} {exact:?}");
    }

    #[test]
    fn margin_constant_is_one_for_the_design_norm() {
        let (model, z, generator) = linear_setup();
        let tau = TauNorm::Design { z: z.clone() };
        let t0 = vec![1.0, 0.0, -0.5];
        let fit = margin_fit(&model, z.view(), &generator, &t0, &tau, 1.0, 50, 0, 1).unwrap();
        assert_relative_eq!(fit.c, 1.0, epsilon = 1e-10);
        let tau2 = TauNorm::Weighted {
            root: z.mapv(|v| 2.0 * v) / (z.nrows() as f64).sqrt(),
        };
        let fit2 = margin_fit(&model, z.view(), &generator, &t0, &tau2, 1.0, 50, 0, 1).unwrap();
        assert_relative_eq!(fit2.c, 0.25, epsilon = 1e-10);
    }
}
