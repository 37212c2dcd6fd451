use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use crate::error::{Error, Result};

pub(crate) const COVER_SLACK: f64 = 1e-12;

/// Farthest-point ordering of a cloud, seeded at index 0.
///
/// `order[k]` is the k-th center added; `cover_radius[k]` is the largest
/// distance from any point to the first k+1 centers. Ties go to the lowest
/// index, so the ordering is a deterministic function of the input order.
#[derive(Debug, Clone, PartialEq)]
pub struct FarthestPointOrder {
    pub order: Vec<usize>,
    pub cover_radius: Vec<f64>,
}

impl FarthestPointOrder {
    pub fn new(cloud: &PointCloud) -> Self {
        Self::within(cloud, &(0..cloud.len()).collect::<Vec<_>>(), None)
    }

    /// Ordering restricted to `members`, seeded at `members[0]`, stopping
    /// after `limit` centers when given.
    pub(crate) fn within(cloud: &PointCloud, members: &[usize], limit: Option<usize>) -> Self {
        let m = members.len();
        let limit = limit.unwrap_or(m).min(m);
        let mut order = Vec::with_capacity(limit);
        let mut cover_radius = Vec::with_capacity(limit);
        if m == 0 || limit == 0 {
            return Self {
                order,
                cover_radius,
            };
        }
        let mut nearest = vec![f64::INFINITY; m];
        let mut chosen = vec![false; m];
        let mut next = 0usize;
        while order.len() < limit {
            chosen[next] = true;
            let c = members[next];
            order.push(c);
            let center = cloud.point(c);
            let center = center.as_slice().expect("rows are contiguous");
            let mut best = (0usize, -1.0f64);
            for (k, &v) in members.iter().enumerate() {
                let d2 = squared(center, cloud.point(v).as_slice().expect("rows are contiguous"));
                nearest[k] = nearest[k].min(d2);
                if !chosen[k] && nearest[k] > best.1 {
                    best = (k, nearest[k]);
                }
            }
            if best.1 < 0.0 {
                cover_radius.push(0.0);
                break;
            }
            cover_radius.push(best.1.sqrt() / cloud.scale());
            next = best.0;
        }
        Self {
            order,
            cover_radius,
        }
    }

    /// Number of leading centers needed to cover every point within `radius`
    /// (up to a relative rounding slack of 1e−12).
    pub fn size_at(&self, radius: f64) -> usize {
        let radius = radius * (1.0 + COVER_SLACK);
        self.cover_radius
            .iter()
            .position(|&r| r <= radius)
            .map_or(self.order.len(), |k| k + 1)
    }
}

/// Farthest-point greedy cover: seed with point 0, add the point farthest
/// from the chosen centers until every point is within `radius`.
pub fn greedy_cover(cloud: &PointCloud, radius: f64) -> Result<Vec<usize>> {
    if !(radius >= 0.0) {
        return Err(Error::invalid("cover radius must be nonnegative"));
    }
    let fp = FarthestPointOrder::new(cloud);
    let k = fp.size_at(radius);
    Ok(fp.order[..k].to_vec())
}

fn squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Largest cloud accepted by [`minimal_cover_size`].
pub const MINIMAL_COVER_LIMIT: usize = 12;

/// Size of a smallest set of cloud points covering the cloud within
/// `radius`, by enumeration of center subsets in increasing size.
pub fn minimal_cover_size(cloud: &PointCloud, radius: f64) -> Result<usize> {
    let m = cloud.len();
    if m > MINIMAL_COVER_LIMIT {
        return Err(Error::TooLarge {
            what: "minimal cover enumeration".into(),
            size: m,
            limit: MINIMAL_COVER_LIMIT,
        });
    }
    let within: Vec<u32> = (0..m)
        .map(|c| {
            (0..m)
                .filter(|&v| cloud.dist(c, v) <= radius)
                .fold(0u32, |acc, v| acc | (1 << v))
        })
        .collect();
    let full = if m == 32 { u32::MAX } else { (1u32 << m) - 1 };
    let mut best = m;
    for subset in 1u32..(1u32 << m) {
        let size = subset.count_ones() as usize;
        if size >= best {
            continue;
        }
        let covered = (0..m)
            .filter(|&c| subset & (1 << c) != 0)
            .fold(0u32, |acc, c| acc | within[c]);
        if covered == full {
            best = size;
        }
    }
    Ok(best)
}

/// Nested greedy covers at radii 2^{−s}R_n, s = 0..=S. Level s keeps the
/// first N_s centers of one farthest-point ordering, so levels are nested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverTree {
    pub radius: f64,
    pub levels: Vec<Vec<usize>>,
}

impl CoverTree {
    pub fn build(cloud: &PointCloud, depth: usize) -> Self {
        Self::from_order(cloud, &FarthestPointOrder::new(cloud), depth)
    }

    pub fn from_order(cloud: &PointCloud, fp: &FarthestPointOrder, depth: usize) -> Self {
        let r = cloud.radius();
        let levels = (0..=depth)
            .map(|s| {
                let k = fp.size_at(r * 0.5f64.powi(s as i32));
                fp.order[..k].to_vec()
            })
            .collect();
        Self { radius: r, levels }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn depth(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    /// max_s of (max distance to nearest level-s center) − 2^{−s}R_n;
    /// nonpositive when every level covers.
    pub fn coverage_excess(&self, cloud: &PointCloud) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (s, centers) in self.levels.iter().enumerate() {
            let target = self.radius * 0.5f64.powi(s as i32);
            for v in 0..cloud.len() {
                let d = centers
                    .iter()
                    .map(|&c| cloud.dist(c, v))
                    .fold(f64::INFINITY, f64::min);
                worst = worst.max(d - target);
            }
        }
        worst
    }
}
