use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use super::cover::FarthestPointOrder;

/// Largest depth tried by [`dudley_bound_opt`]; 2^{−24} < 1e−7.
pub const MAX_DEPTH: usize = 24;

/// Σ_{s=0}^S 2^{−(s−1)} R √(2 log(2 N_s)/n) + 2^{−S} R for given cover sizes
/// N_0..N_S.
pub fn dudley_from_sizes(sizes: &[usize], radius: f64, n: usize) -> f64 {
    let depth = sizes.len().saturating_sub(1);
    let chain: f64 = sizes
        .iter()
        .enumerate()
        .map(|(s, &ns)| {
            2f64.powi(1 - s as i32) * radius * (2.0 * (2.0 * ns as f64).ln() / n as f64).sqrt()
        })
        .sum();
    chain + 0.5f64.powi(depth as i32) * radius
}

fn greedy_sizes(cloud: &PointCloud, fp: &FarthestPointOrder, depth: usize) -> Vec<usize> {
    let r = cloud.radius();
    (0..=depth)
        .map(|s| fp.size_at(r * 0.5f64.powi(s as i32)))
        .collect()
}

/// Dudley's chaining-tree bound with greedy covers at radii 2^{−s}R_n.
pub fn dudley_bound(cloud: &PointCloud, depth: usize) -> f64 {
    if cloud.radius() == 0.0 {
        return 0.0;
    }
    let fp = FarthestPointOrder::new(cloud);
    dudley_from_sizes(&greedy_sizes(cloud, &fp, depth), cloud.radius(), cloud.n())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DudleyOptimum {
    pub depth: usize,
    pub value: f64,
    /// N_0..N_{MAX_DEPTH} from the greedy covers.
    pub cover_sizes: Vec<usize>,
}

/// [`dudley_bound`] minimized over S ∈ {0..24}; the smallest minimizing S
/// is reported.
pub fn dudley_bound_opt(cloud: &PointCloud) -> DudleyOptimum {
    let fp = FarthestPointOrder::new(cloud);
    let sizes = greedy_sizes(cloud, &fp, MAX_DEPTH);
    if cloud.radius() == 0.0 {
        return DudleyOptimum {
            depth: 0,
            value: 0.0,
            cover_sizes: sizes,
        };
    }
    let mut best = (0usize, f64::INFINITY);
    for s in 0..=MAX_DEPTH {
        let v = dudley_from_sizes(&sizes[..=s], cloud.radius(), cloud.n());
        if v < best.1 {
            best = (s, v);
        }
    }
    DudleyOptimum {
        depth: best.0,
        value: best.1,
        cover_sizes: sizes,
    }
}

/// Dudley's bound with the ℓ1-hull entropy bound log(2N_s) ≤ 2^{2s} log(4p)
/// and R_n ≤ K_n inserted: 2(S+1) K √(2 log(4p)/n) + 2^{−S} K, minimized over S.
pub fn dudley_entropy_bound(p: usize, n: usize, k_n: f64) -> (usize, f64) {
    let unit = 2.0 * k_n * (2.0 * (4.0 * p as f64).ln() / n as f64).sqrt();
    (0..=MAX_DEPTH)
        .map(|s| (s, (s + 1) as f64 * unit + 0.5f64.powi(s as i32) * k_n))
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
}
