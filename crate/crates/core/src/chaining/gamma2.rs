use serde::{Deserialize, Serialize};

use super::cloud::{diameter_of, PointCloud};
use super::cover::FarthestPointOrder;
use crate::error::{Error, Result};

/// Largest cloud accepted by [`gamma2_exhaustive`].
pub const EXHAUSTIVE_LIMIT: usize = 5;

/// Allowed number of cells at level s: 1 at s = 0, 2^{2^s} afterwards
/// (saturating at usize::MAX).
pub fn level_capacity(s: usize) -> usize {
    if s == 0 {
        return 1;
    }
    if s >= 6 {
        return usize::MAX;
    }
    1usize << (1usize << s)
}

/// Nested partitions A_0, A_1, ... of a point cloud. `labels[s][v]` is the
/// cell of point v at level s, cells numbered 0..count; `diameters[s][c]`
/// is the diameter of cell c. Levels after the last are taken to be
/// singletons (or at least zero-diameter cells).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissiblePartitionSequence {
    pub labels: Vec<Vec<usize>>,
    pub diameters: Vec<Vec<f64>>,
}

impl AdmissiblePartitionSequence {
    fn push_level(&mut self, cloud: &PointCloud, labels: Vec<usize>) {
        let cells = cells_of(&labels);
        let diam = cells.iter().map(|c| diameter_of(cloud, c)).collect();
        self.labels.push(labels);
        self.diameters.push(diam);
    }

    pub fn depth(&self) -> usize {
        self.labels.len().saturating_sub(1)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.diameters.iter().map(Vec::len).collect()
    }

    /// sup_v Σ_s 2^{s/2} Δ(A_s(v)).
    pub fn value(&self) -> f64 {
        let m = self.labels.first().map_or(0, Vec::len);
        (0..m)
            .map(|v| {
                self.labels
                    .iter()
                    .zip(&self.diameters)
                    .enumerate()
                    .map(|(s, (lab, diam))| 2f64.powf(s as f64 / 2.0) * diam[lab[v]])
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Checks |A_0| = 1, |A_s| ≤ 2^{2^s}, refinement, and that every stored
    /// diameter is nonnegative and matches recomputation.
    pub fn validate(&self, cloud: &PointCloud) -> Result<()> {
        let m = cloud.len();
        for (s, (lab, diam)) in self.labels.iter().zip(&self.diameters).enumerate() {
            if lab.len() != m {
                return Err(Error::invalid(format!("level {s} labels {} of {m} points", lab.len())));
            }
            let cells = cells_of(lab);
            if cells.len() != diam.len() || cells.iter().any(Vec::is_empty) {
                return Err(Error::invalid(format!("level {s} cell numbering is not contiguous")));
            }
            if cells.len() > level_capacity(s) {
                return Err(Error::invalid(format!(
                    "level {s} has {} cells, more than allowed",
                    cells.len()
                )));
            }
            for (c, cell) in cells.iter().enumerate() {
                let d = diameter_of(cloud, cell);
                if !(diam[c] >= 0.0) || (diam[c] - d).abs() > 1e-12 * d.max(1.0) {
                    return Err(Error::invalid(format!("level {s} cell {c} diameter mismatch")));
                }
            }
            if s > 0 && !refines(lab, &self.labels[s - 1]) {
                return Err(Error::invalid(format!("level {s} does not refine level {}", s - 1)));
            }
        }
        if let Some(last) = self.diameters.last() {
            if last.iter().any(|&d| d > 0.0) {
                return Err(Error::invalid("last level still has cells of positive diameter"));
            }
        }
        Ok(())
    }
}

fn cells_of(labels: &[usize]) -> Vec<Vec<usize>> {
    let count = labels.iter().map(|&c| c + 1).max().unwrap_or(0);
    let mut cells = vec![Vec::new(); count];
    for (v, &c) in labels.iter().enumerate() {
        cells[c].push(v);
    }
    cells
}

/// Every cell of `fine` lies inside one cell of `coarse`.
fn refines(fine: &[usize], coarse: &[usize]) -> bool {
    let mut parent: Vec<Option<usize>> = vec![None; fine.len()];
    for (v, &c) in fine.iter().enumerate() {
        match parent[c] {
            None => parent[c] = Some(coarse[v]),
            Some(p) if p != coarse[v] => return false,
            _ => {}
        }
    }
    true
}

/// Greedy admissible sequence by recursive farthest-point splitting.
///
/// Going from level s−1 to s, every cell may split into at most
/// ⌊2^{2^s} / |A_{s−1}|⌋ parts, so |A_s| ≤ 2^{2^s}. A cell is split by
/// choosing that many farthest-point centers inside it and assigning each
/// member to its nearest center (lowest center rank on ties). Splitting
/// stops once every cell has diameter zero.
pub fn gamma2_greedy(cloud: &PointCloud) -> (f64, AdmissiblePartitionSequence) {
    let m = cloud.len();
    let mut seq = AdmissiblePartitionSequence {
        labels: Vec::new(),
        diameters: Vec::new(),
    };
    seq.push_level(cloud, vec![0; m]);
    let mut s = 0;
    while seq.diameters[s].iter().any(|&d| d > 0.0) {
        s += 1;
        let prev = cells_of(&seq.labels[s - 1]);
        let quota = (level_capacity(s) / prev.len()).max(1);
        let mut labels = vec![0; m];
        let mut next = 0;
        for (cell, &diam) in prev.iter().zip(&seq.diameters[s - 1]) {
            if diam == 0.0 || cell.len() == 1 {
                for &v in cell {
                    labels[v] = next;
                }
                next += 1;
                continue;
            }
            let centers = FarthestPointOrder::within(cloud, cell, Some(quota)).order;
            for &v in cell {
                let (best, _) = centers.iter().enumerate().fold(
                    (0usize, f64::INFINITY),
                    |acc, (k, &c)| {
                        let d = cloud.dist(c, v);
                        if d < acc.1 {
                            (k, d)
                        } else {
                            acc
                        }
                    },
                );
                labels[v] = next + best;
            }
            next += centers.len();
        }
        seq.push_level(cloud, labels);
    }
    (seq.value(), seq)
}

/// Exact γ2 by enumerating every admissible sequence; clouds of at most
/// five points. Once 2^{2^s} ≥ |cloud| the all-singleton level is optimal,
/// so the enumeration is finite.
pub fn gamma2_exhaustive(cloud: &PointCloud) -> Result<f64> {
    let m = cloud.len();
    if m > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge {
            what: "exhaustive gamma2".into(),
            size: m,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let partitions = set_partitions(m);
    let diam: Vec<Vec<f64>> = partitions
        .iter()
        .map(|lab| cells_of(lab).iter().map(|c| diameter_of(cloud, c)).collect())
        .collect();
    let whole = diameter_of(cloud, &(0..m).collect::<Vec<_>>());
    let acc = vec![whole; m];
    let root = partitions
        .iter()
        .position(|lab| lab.iter().all(|&c| c == 0))
        .expect("the one-cell partition is enumerated");
    Ok(exhaustive_rec(&partitions, &diam, root, 1, acc, m))
}

fn exhaustive_rec(
    partitions: &[Vec<usize>],
    diam: &[Vec<f64>],
    current: usize,
    s: usize,
    acc: Vec<f64>,
    m: usize,
) -> f64 {
    let cells = diam[current].len();
    if cells == m || level_capacity(s) >= m || diam[current].iter().all(|&d| d == 0.0) {
        return acc.iter().copied().fold(0.0, f64::max);
    }
    let weight = 2f64.powf(s as f64 / 2.0);
    let mut best = f64::INFINITY;
    for (k, lab) in partitions.iter().enumerate() {
        let size = diam[k].len();
        if size > level_capacity(s) || !refines(lab, &partitions[current]) {
            continue;
        }
        let next: Vec<f64> = (0..m).map(|v| acc[v] + weight * diam[k][lab[v]]).collect();
        if next.iter().copied().fold(0.0, f64::max) >= best {
            continue;
        }
        // staying at the same partition is allowed but never helps
        if k == current {
            continue;
        }
        best = best.min(exhaustive_rec(partitions, diam, k, s + 1, next, m));
    }
    if best.is_finite() {
        best
    } else {
        acc.iter().copied().fold(0.0, f64::max)
    }
}

/// All set partitions of {0..m} as restricted growth strings.
fn set_partitions(m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; m];
    fn rec(k: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == cur.len() {
            out.push(cur.clone());
            return;
        }
        for c in 0..=max + 1 {
            cur[k] = c;
            rec(k + 1, max.max(c), cur, out);
        }
    }
    if m == 0 {
        return vec![Vec::new()];
    }
    rec(1, 0, &mut cur, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_gaussian, replication_rng};
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn random_cloud(m: usize, d: usize, seed: u64) -> PointCloud {
        let mut rng = replication_rng(seed, 0);
        let mut v = vec![0.0; m * d];
        fill_gaussian(&mut rng, &mut v);
        PointCloud::new(Array2::from_shape_vec((m, d), v).unwrap()).unwrap()
    }

    #[test]
    fn partition_counts_are_bell_numbers() {
        let bell = [1, 1, 2, 5, 15, 52];
        for (m, b) in bell.iter().enumerate() {
            assert_eq!(set_partitions(m).len(), *b);
        }
    }

    #[test]
    fn singleton_and_pair() {
        let one = PointCloud::from_points(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(gamma2_greedy(&one).0, 0.0);
        assert_eq!(gamma2_exhaustive(&one).unwrap(), 0.0);
        let two = PointCloud::from_points(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let d = two.dist(0, 1);
        assert_relative_eq!(gamma2_greedy(&two).0, d, epsilon = 1e-15);
        assert_relative_eq!(gamma2_exhaustive(&two).unwrap(), d, epsilon = 1e-15);
    }

    #[test]
    fn five_points_one_pair_must_share_a_level_one_cell() {
        // 1-D points 0, 10, 20, 30, 30.5: the exact value pairs the closest two
        let pts: Vec<Vec<f64>> = [0.0, 10.0, 20.0, 30.0, 30.5].iter().map(|&x| vec![x]).collect();
        let c = PointCloud::from_points(&pts).unwrap();
        let exact = gamma2_exhaustive(&c).unwrap();
        assert_relative_eq!(exact, 30.5 + 2f64.sqrt() * 0.5, epsilon = 1e-12);
        assert!(gamma2_greedy(&c).0 >= exact - 1e-12);
    }

    #[test]
    fn exhaustive_refuses_six_points() {
        let c = random_cloud(6, 2, 1);
        assert!(matches!(gamma2_exhaustive(&c), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn coincident_points_give_zero() {
        let c = PointCloud::from_points(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(gamma2_greedy(&c).0, 0.0);
        assert_eq!(gamma2_exhaustive(&c).unwrap(), 0.0);
    }

    #[test]
    fn capacity_sequence() {
        assert_eq!(level_capacity(0), 1);
        assert_eq!(level_capacity(1), 4);
        assert_eq!(level_capacity(2), 16);
        assert_eq!(level_capacity(3), 256);
        assert_eq!(level_capacity(9), usize::MAX);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn greedy_sequences_are_admissible(seed in 0u64..100_000, m in 1usize..120) {
            let c = random_cloud(m, 3, seed);
            let (value, seq) = gamma2_greedy(&c);
            prop_assert!(seq.validate(&c).is_ok());
            prop_assert_eq!(seq.sizes()[0], 1);
            prop_assert!((seq.value() - value).abs() <= 1e-12 * value.max(1.0));
        }

        #[test]
        fn small_clouds_are_sandwiched(seed in 0u64..100_000, m in 1usize..=5) {
            let c = random_cloud(m, 2, seed);
            let exact = gamma2_exhaustive(&c).unwrap();
            let (greedy, _) = gamma2_greedy(&c);
            prop_assert!(exact <= greedy + 1e-12);
            let cap = (1.0 + 2f64.sqrt()) * c.diameter();
            prop_assert!(greedy <= cap + 1e-12);
            prop_assert_eq!(exact == 0.0, c.diameter() == 0.0);
        }

        #[test]
        fn homogeneity(seed in 0u64..100_000, m in 1usize..=5, k in 0.1f64..10.0) {
            let c = random_cloud(m, 2, seed);
            let s = c.scaled(k).unwrap();
            let (g, _) = gamma2_greedy(&c);
            let (gs, _) = gamma2_greedy(&s);
            prop_assert!((gs - k * g).abs() <= 1e-10 * (k * g).max(1e-300));
            let e = gamma2_exhaustive(&c).unwrap();
            prop_assert!((gamma2_exhaustive(&s).unwrap() - k * e).abs() <= 1e-10 * (k * e).max(1e-300));
        }
    }
}
