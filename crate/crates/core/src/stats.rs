use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiplier law used by a Monte Carlo process estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Multiplier {
    Rademacher,
    Gaussian,
}

/// How the supremum inside each replication was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    DualNormExact,
    VertexRandomDirection,
}

/// Monte Carlo estimate of an expected supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
    pub seed: u64,
    pub kind: Multiplier,
    pub search: SearchMethod,
    /// Set when at least one replication came from a non-exhaustive search.
    pub lower_estimate: bool,
}

impl ProcessEstimate {
    pub fn from_samples(
        samples: &[f64],
        seed: u64,
        kind: Multiplier,
        search: SearchMethod,
        lower_estimate: bool,
    ) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("a process estimate needs at least 2 replications"));
        }
        let (mean, std_error) = mean_and_se(samples);
        Ok(Self {
            mean,
            std_error,
            replications: samples.len(),
            seed,
            kind,
            search,
            lower_estimate,
        })
    }
}

/// Sample mean and standard error (sample std / sqrt(n)).
pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn binomial_se(freq: f64, trials: usize) -> f64 {
    (freq * (1.0 - freq) / trials as f64).sqrt()
}

/// Standard error of a ratio a/b of two independent-ish means (delta method).
pub fn ratio_se(a: f64, se_a: f64, b: f64, se_b: f64) -> f64 {
    let r = a / b;
    let rel = (se_a / a).powi(2) + (se_b / b).powi(2);
    if a == 0.0 {
        se_a / b
    } else {
        r.abs() * rel.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

/// Ordinary least squares fit y ≈ a + b x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("linear fit needs two equal-length series of length >= 2"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("linear fit needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        intercept,
        slope,
        r_squared,
    })
}

/// Least squares y ≈ c0 + c1 x1 + c2 x2, returned as [c0, c1, c2].
pub fn two_predictor_fit(x1: &[f64], x2: &[f64], y: &[f64]) -> Result<[f64; 3]> {
    let n = y.len();
    if x1.len() != n || x2.len() != n || n < 3 {
        return Err(Error::invalid("two-predictor fit needs >= 3 aligned observations"));
    }
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for i in 0..n {
        let row = [1.0, x1[i], x2[i]];
        for a in 0..3 {
            atb[a] += row[a] * y[i];
            for b in 0..3 {
                ata[a][b] += row[a] * row[b];
            }
        }
    }
    solve3(ata, atb).ok_or_else(|| Error::invalid("two-predictor fit is rank deficient"))
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}
