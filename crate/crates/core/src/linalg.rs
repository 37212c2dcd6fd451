//! Small dense linear-algebra and projection helpers.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Empirical norm ‖v‖_n = sqrt(Σ v_i² / n).
pub fn norm_n(v: ArrayView1<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// ‖·‖_n of every column of an n×p matrix.
pub fn column_norms_n(a: ArrayView2<f64>) -> Vec<f64> {
    a.axis_iter(Axis(1)).map(norm_n).collect()
}

/// Rescales the columns of `a` to unit ‖·‖_n; zero columns are left alone.
pub fn normalize_columns(a: &mut Array2<f64>) {
    for mut col in a.axis_iter_mut(Axis(1)) {
        let nrm = norm_n(col.view());
        if nrm > 0.0 {
            col.mapv_inplace(|x| x / nrm);
        }
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: ArrayView2<f64>) -> Vec<f64> {
    let p = m.nrows();
    let mut a = m.to_owned();
    for _sweep in 0..100 {
        let off: f64 = (0..p)
            .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for i in 0..p {
            for j in i + 1..p {
                let aij = a[[i, j]];
                if aij.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[j, j]] - a[[i, i]]) / (2.0 * aij);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..p {
                    let aki = a[[k, i]];
                    let akj = a[[k, j]];
                    a[[k, i]] = c * aki - s * akj;
                    a[[k, j]] = s * aki + c * akj;
                }
                for k in 0..p {
                    let aik = a[[i, k]];
                    let ajk = a[[j, k]];
                    a[[i, k]] = c * aik - s * ajk;
                    a[[j, k]] = s * aik + c * ajk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..p).map(|i| a[[i, i]]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Lower-triangular L with LLᵀ = A for a symmetric positive definite A, or
/// `None` when a pivot is not positive.
pub fn cholesky(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let p = a.nrows();
    let mut l = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in j + 1..p {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Largest eigenvalue of AᵀA (squared spectral norm) by power iteration.
pub fn spectral_norm_sq(a: ArrayView2<f64>) -> f64 {
    let p = a.ncols();
    if p == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = ndarray::Array1::from_elem(p, 1.0 / (p as f64).sqrt());
    // deterministic perturbation so we do not start orthogonal to the top vector
    for (j, x) in v.iter_mut().enumerate() {
        *x *= 1.0 + 0.01 * ((j * 7919 % 97) as f64 / 97.0);
    }
    let mut est = 0.0;
    for _ in 0..500 {
        let av = a.dot(&v);
        let w = a.t().dot(&av);
        let nrm = w.dot(&w).sqrt();
        if nrm == 0.0 {
            return 0.0;
        }
        let new_est = v.dot(&w) / v.dot(&v);
        v = w / nrm;
        if (new_est - est).abs() <= 1e-12 * new_est.abs() {
            return new_est;
        }
        est = new_est;
    }
    est
}

/// Euclidean projection onto {x : ‖x − c‖₁ ≤ radius, lo ≤ x ≤ hi}.
///
/// `center` must lie inside the box. Infinite bounds are allowed.
pub fn project_l1_ball_box(
    v: &[f64],
    center: &[f64],
    radius: f64,
    lo: Option<&[f64]>,
    hi: Option<&[f64]>,
    out: &mut [f64],
) {
    let p = v.len();
    let bound = |j: usize| -> (f64, f64) {
        let a = lo.map_or(f64::NEG_INFINITY, |l| l[j] - center[j]);
        let b = hi.map_or(f64::INFINITY, |h| h[j] - center[j]);
        (a.min(0.0), b.max(0.0))
    };
    let shrink = |mu: f64, j: usize| -> f64 {
        let d = v[j] - center[j];
        let s = d.signum() * (d.abs() - mu).max(0.0);
        let (a, b) = bound(j);
        s.clamp(a, b)
    };
    let l1_at = |mu: f64| -> f64 { (0..p).map(|j| shrink(mu, j).abs()).sum() };

    let mu = if l1_at(0.0) <= radius {
        0.0
    } else {
        let mut lo_mu = 0.0;
        let mut hi_mu = (0..p).map(|j| (v[j] - center[j]).abs()).fold(0.0, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo_mu + hi_mu);
            if mid <= lo_mu || mid >= hi_mu {
                break;
            }
            if l1_at(mid) > radius {
                lo_mu = mid;
            } else {
                hi_mu = mid;
            }
        }
        hi_mu
    };
    for j in 0..p {
        out[j] = center[j] + shrink(mu, j);
    }
}

/// Euclidean projection onto {x : Σ x = total, lo ≤ x ≤ hi}.
pub fn project_capped_simplex(v: &[f64], lo: &[f64], hi: &[f64], total: f64, out: &mut [f64]) {
    let sum_at = |tau: f64| -> f64 {
        v.iter()
            .zip(lo.iter().zip(hi))
            .map(|(x, (l, h))| (x - tau).clamp(*l, *h))
            .sum()
    };
    let mut a = v
        .iter()
        .zip(hi)
        .map(|(x, h)| x - h)
        .fold(f64::INFINITY, f64::min);
    let mut b = v
        .iter()
        .zip(lo)
        .map(|(x, l)| x - l)
        .fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if sum_at(mid) > total {
            a = mid;
        } else {
            b = mid;
        }
    }
    let tau = 0.5 * (a + b);
    for (j, o) in out.iter_mut().enumerate() {
        *o = (v[j] - tau).clamp(lo[j], hi[j]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn jacobi_matches_known_spectrum() {
        let m = array![[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]];
        let e = symmetric_eigenvalues(m.view());
        assert_relative_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(e[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(e[2], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_reproduces_matrix() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        assert!(cholesky(array![[1.0, 2.0], [2.0, 1.0]].view()).is_none());
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let a = array![[3.0, 0.0], [0.0, -4.0], [0.0, 0.0]];
        assert_relative_eq!(spectral_norm_sq(a.view()), 16.0, epsilon = 1e-9);
    }

    #[test]
    fn l1_projection_interior_point_is_fixed() {
        let v = [0.1, -0.2];
        let mut out = [0.0; 2];
        project_l1_ball_box(&v, &[0.0, 0.0], 1.0, None, None, &mut out);
        assert_eq!(out, v);
    }

    #[test]
    fn capped_simplex_projection_sums_to_total() {
        let mut out = [0.0; 3];
        project_capped_simplex(&[0.9, 0.9, -1.0], &[0.0; 3], &[1.0; 3], 1.0, &mut out);
        assert_relative_eq!(out.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(out[0], 0.5, epsilon = 1e-12);
        assert_eq!(out[2], 0.0);
    }

    proptest! {
        #[test]
        fn l1_projection_is_feasible_and_nonexpansive(
            v in proptest::collection::vec(-5.0f64..5.0, 1..8),
            r in 0.01f64..3.0,
        ) {
            let c = vec![0.0; v.len()];
            let mut out = vec![0.0; v.len()];
            project_l1_ball_box(&v, &c, r, None, None, &mut out);
            prop_assert!(l1_norm(&out) <= r * (1.0 + 1e-12) + 1e-12);
            // projection never moves further than the distance to the centre
            let d_proj: f64 = v.iter().zip(&out).map(|(a, b)| (a - b).powi(2)).sum();
            let d_c: f64 = v.iter().map(|a| a * a).sum();
            prop_assert!(d_proj <= d_c + 1e-12);
        }
    }
}
