use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Finite set of points in ℝ^n under ‖v‖_n = (Σ v_i² / n)^{1/2}.
///
/// Points are stored as rows of coordinates `c` with ‖v‖_n = ‖c‖₂ / scale.
/// A raw cloud keeps the n coordinates themselves (scale √n); an embedded
/// cloud keeps an isometric image in a lower dimension (scale 1), so that
/// distance evaluation does not depend on n.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Array2<f64>,
    scale: f64,
    n: usize,
    radius: f64,
}

impl PointCloud {
    /// Points given as the rows of an m×n matrix.
    pub fn new(points: Array2<f64>) -> Result<Self> {
        let n = points.ncols();
        if n == 0 || points.nrows() == 0 {
            return Err(Error::invalid(
                "a point cloud needs at least one point of positive dimension",
            ));
        }
        Self::build(points, (n as f64).sqrt(), n)
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.first().map_or(0, Vec::len);
        if points.iter().any(|v| v.len() != n) {
            return Err(Error::invalid("all points must have the same dimension"));
        }
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        let m = Array2::from_shape_vec((points.len(), n), flat)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(m)
    }

    /// Isometric coordinates: row k stands for a point v_k ∈ ℝ^n with
    /// ‖v_k − v_l‖_n = ‖c_k − c_l‖₂.
    pub fn embedded(coords: Array2<f64>, n: usize) -> Result<Self> {
        if n == 0 || coords.nrows() == 0 {
            return Err(Error::invalid(
                "a point cloud needs at least one point of positive dimension",
            ));
        }
        Self::build(coords, 1.0, n)
    }

    fn build(coords: Array2<f64>, scale: f64, n: usize) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point cloud coordinates".into()));
        }
        let radius = coords
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt() / scale)
            .fold(0.0, f64::max);
        Ok(Self {
            coords: coords.as_standard_layout().into_owned(),
            scale,
            n,
            radius,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    /// Dimension n of the ambient space ℝ^n.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Cloud radius R_n = max_v ‖v‖_n.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn coords(&self) -> ArrayView2<'_, f64> {
        self.coords.view()
    }

    pub fn point(&self, k: usize) -> ArrayView1<'_, f64> {
        self.coords.row(k)
    }

    /// Divisor turning the Euclidean length of stored coordinates into ‖·‖_n.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn norm(&self, k: usize) -> f64 {
        let r = self.coords.row(k);
        r.dot(&r).sqrt() / self.scale
    }

    pub fn dist(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (self.coords.row(a), self.coords.row(b));
        let d2: f64 = x.iter().zip(y.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
        d2.sqrt() / self.scale
    }

    pub fn diameter(&self) -> f64 {
        diameter_of(self, &(0..self.len()).collect::<Vec<_>>())
    }

    /// The cloud with every coordinate multiplied by c.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::build(&self.coords * c, self.scale, self.n)
    }

    /// R_n recomputed point by point.
    pub fn recompute_radius(&self) -> f64 {
        (0..self.len()).map(|k| self.norm(k)).fold(0.0, f64::max)
    }
}

/// Max pairwise distance within `cell`.
pub(crate) fn diameter_of(cloud: &PointCloud, cell: &[usize]) -> f64 {
    let mut d = 0.0f64;
    for (a, &i) in cell.iter().enumerate() {
        for &j in &cell[a + 1..] {
            d = d.max(cloud.dist(i, j));
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn metric_is_root_mean_square() {
        let c = PointCloud::new(array![[3.0, 4.0], [0.0, 0.0]]).unwrap();
        assert_relative_eq!(c.dist(0, 1), 5.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(c.radius(), c.recompute_radius());
        assert_eq!(c.n(), 2);
    }

    #[test]
    fn embedded_cloud_uses_plain_euclidean_coordinates() {
        let c = PointCloud::embedded(array![[3.0, 4.0], [0.0, 0.0]], 100).unwrap();
        assert_relative_eq!(c.dist(0, 1), 5.0);
        assert_eq!(c.n(), 100);
    }

    #[test]
    fn ragged_points_are_rejected() {
        assert!(PointCloud::from_points(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
