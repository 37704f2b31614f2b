//! Feature-distribution distances: Fréchet distance between Gaussian fits
//! and the unbiased polynomial-kernel MMD² (KID).

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// First two moments of a feature cloud (rows = samples).
#[derive(Debug, Clone)]
pub struct GaussianStats<T: Scalar> {
    pub mean: Vec<T>,
    pub covariance: Matrix<T>,
    pub count: usize,
}

/// Sample mean and unbiased (n-1) covariance.
pub fn gaussian_stats<T: Scalar>(features: &Matrix<T>) -> Result<GaussianStats<T>> {
    let n = features.rows();
    let d = features.cols();
    if n < 2 {
        return Err(CoreError::Degenerate(format!(
            "need at least 2 samples for moments, got {n}"
        )));
    }
    let inv_n = T::one() / T::from_usize(n);
    let mut mean = vec![T::zero(); d];
    for i in 0..n {
        for (j, m) in mean.iter_mut().enumerate() {
            *m = *m + features.get(i, j);
        }
    }
    for m in mean.iter_mut() {
        *m = *m * inv_n;
    }
    let inv_nm1 = T::one() / T::from_usize(n - 1);
    let mut cov = Matrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            let da = features.get(i, a) - mean[a];
            for b in a..d {
                let db = features.get(i, b) - mean[b];
                let v = cov.get(a, b) + da * db;
                cov.set(a, b, v);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov.get(a, b) * inv_nm1;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    Ok(GaussianStats {
        mean,
        covariance: cov,
        count: n,
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors-as-columns).
pub fn symmetric_eigen<T: Scalar>(m: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let n = m.rows();
    if m.cols() != n {
        return Err(CoreError::Shape {
            op: "symmetric_eigen",
            detail: format!("square matrix required, got {:?}", m.shape()),
        });
    }
    let mut a = m.clone();
    let mut v = Matrix::<T>::identity(n);
    let tol = T::from_f64(1e-14);
    let off = |a: &Matrix<T>| {
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s = s + a.get(i, j) * a.get(i, j);
                }
            }
        }
        s.sqrt()
    };
    let scale = m.frobenius_norm().max(T::one());
    for _sweep in 0..100 {
        if off(&a) <= tol * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= tol * scale * T::from_f64(1e-2) {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (T::from_f64(2.0) * apq);
                let t = {
                    let s = if theta >= T::zero() { T::one() } else { -T::one() };
                    s / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| a.get(i, i)).collect();
    Ok((eigvals, v))
}

fn matrix_sqrt_psd<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    let (eigvals, vecs) = symmetric_eigen(m)?;
    let n = m.rows();
    // V diag(sqrt(max(λ,0))) Vᵀ
    let mut out = Matrix::zeros(n, n);
    for k in 0..n {
        let lam = eigvals[k].max(T::zero()).sqrt();
        if lam == T::zero() {
            continue;
        }
        for i in 0..n {
            let vik = vecs.get(i, k) * lam;
            if vik == T::zero() {
                continue;
            }
            for j in 0..n {
                out.set(i, j, out.get(i, j) + vik * vecs.get(j, k));
            }
        }
    }
    Ok(out)
}

/// ‖μa−μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^{1/2}). The cross square root is taken
/// through the symmetrized product Σa^{1/2} Σb Σa^{1/2} with negative
/// eigenvalues clamped to zero; a 1e-10 diagonal ridge keeps small-sample
/// covariances well-posed.
pub fn frechet_distance<T: Scalar>(a: &GaussianStats<T>, b: &GaussianStats<T>) -> Result<T> {
    let d = a.mean.len();
    if b.mean.len() != d {
        return Err(CoreError::DimensionMismatch {
            op: "frechet_distance",
            lhs: vec![d],
            rhs: vec![b.mean.len()],
        });
    }
    let ridge = T::from_f64(1e-10);
    let mut ca = a.covariance.clone();
    let mut cb = b.covariance.clone();
    for i in 0..d {
        ca.set(i, i, ca.get(i, i) + ridge);
        cb.set(i, i, cb.get(i, i) + ridge);
    }
    let mut mean_term = T::zero();
    for i in 0..d {
        let diff = a.mean[i] - b.mean[i];
        mean_term = mean_term + diff * diff;
    }
    let sqrt_a = matrix_sqrt_psd(&ca)?;
    let inner = sqrt_a.matmul(&cb)?.matmul(&sqrt_a)?;
    let (eigvals, _) = symmetric_eigen(&inner)?;
    let mut tr_sqrt = T::zero();
    for lam in eigvals {
        tr_sqrt = tr_sqrt + lam.max(T::zero()).sqrt();
    }
    let mut trace = T::zero();
    for i in 0..d {
        trace = trace + ca.get(i, i) + cb.get(i, i);
    }
    Ok(mean_term + trace - (tr_sqrt + tr_sqrt))
}

/// Unbiased MMD² with the polynomial kernel k(x,y) = (x·y/d + 1)^degree.
/// Within-set sums exclude i == j; the cross term uses all pairs.
pub fn kid<T: Scalar>(real: &Matrix<T>, generated: &Matrix<T>, degree: u32) -> Result<T> {
    let d = real.cols();
    if generated.cols() != d {
        return Err(CoreError::DimensionMismatch {
            op: "kid",
            lhs: vec![real.rows(), real.cols()],
            rhs: vec![generated.rows(), generated.cols()],
        });
    }
    let (m, n) = (real.rows(), generated.rows());
    if m < 2 || n < 2 {
        return Err(CoreError::Degenerate(format!(
            "KID needs at least 2 samples per set, got {m} and {n}"
        )));
    }
    let inv_d = T::one() / T::from_usize(d);
    let kernel = |x: &[T], y: &[T]| -> T {
        let mut dot = T::zero();
        for i in 0..d {
            dot = dot + x[i] * y[i];
        }
        let base = dot * inv_d + T::one();
        let mut acc = T::one();
        for _ in 0..degree {
            acc = acc * base;
        }
        acc
    };
    let mut within_r = T::zero();
    for i in 0..m {
        for j in 0..m {
            if i != j {
                within_r = within_r + kernel(real.row(i), real.row(j));
            }
        }
    }
    within_r = within_r / T::from_usize(m * (m - 1));
    let mut within_g = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                within_g = within_g + kernel(generated.row(i), generated.row(j));
            }
        }
    }
    within_g = within_g / T::from_usize(n * (n - 1));
    let mut cross = T::zero();
    for i in 0..m {
        for j in 0..n {
            cross = cross + kernel(real.row(i), generated.row(j));
        }
    }
    cross = cross / T::from_usize(m * n);
    Ok(within_r + within_g - (cross + cross))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn stats_two_points_hand_case() {
        // ±e₁: mean 0, unbiased covariance diag(2, 0, ...)
        let f = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]]);
        let s = gaussian_stats(&f).unwrap();
        assert_eq!(s.mean, vec![0.0, 0.0, 0.0]);
        assert_eq!(s.covariance.get(0, 0), 2.0);
        assert_eq!(s.covariance.get(1, 1), 0.0);
        assert_eq!(s.count, 2);
    }

    #[test]
    fn stats_identical_points_zero_covariance() {
        let f = Matrix::from_rows(&[vec![3.0, -1.0], vec![3.0, -1.0], vec![3.0, -1.0]]);
        let s = gaussian_stats(&f).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(s.covariance.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let mut rng = Rng::new(3);
        let f = Matrix::from_fn(40, 5, |_, _| rng.normal());
        let s = gaussian_stats(&f).unwrap();
        // independent two-pass computation
        for j in 0..5 {
            let mean: f64 = (0..40).map(|i| f.get(i, j)).sum::<f64>() / 40.0;
            assert!((s.mean[j] - mean).abs() < 1e-10);
            for k in 0..5 {
                let mk: f64 = (0..40).map(|i| f.get(i, k)).sum::<f64>() / 40.0;
                let cov: f64 = (0..40)
                    .map(|i| (f.get(i, j) - mean) * (f.get(i, k) - mk))
                    .sum::<f64>()
                    / 39.0;
                assert!((s.covariance.get(j, k) - cov).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn stats_single_point_rejected() {
        let f = Matrix::from_rows(&[vec![1.0, 2.0]]);
        assert!(gaussian_stats(&f).is_err());
    }

    #[test]
    fn eigen_recovers_diagonal() {
        let m = Matrix::from_rows(&[vec![3.0f64, 0.0], vec![0.0, -1.0]]);
        let (mut vals, _) = symmetric_eigen(&m).unwrap();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] + 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstructs_random_symmetric() {
        let mut rng = Rng::new(9);
        let n = 6;
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.normal();
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        let (vals, vecs) = symmetric_eigen(&m).unwrap();
        // M V = V diag(vals)
        for k in 0..n {
            for i in 0..n {
                let mut mv = 0.0;
                for j in 0..n {
                    mv += m.get(i, j) * vecs.get(j, k);
                }
                assert!((mv - vals[k] * vecs.get(i, k)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn frechet_self_distance_vanishes() {
        let mut rng = Rng::new(21);
        let f = Matrix::from_fn(30, 4, |_, _| rng.normal());
        let s = gaussian_stats(&f).unwrap();
        let d = frechet_distance(&s, &s).unwrap();
        assert!(d.abs() < 1e-8, "{d}");
    }

    #[test]
    fn frechet_one_dimensional_mean_shift() {
        let a = GaussianStats {
            mean: vec![0.0f64],
            covariance: Matrix::from_rows(&[vec![1.5]]),
            count: 10,
        };
        let b = GaussianStats {
            mean: vec![2.0],
            covariance: Matrix::from_rows(&[vec![1.5]]),
            count: 10,
        };
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 4.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn frechet_commuting_diagonals_closed_form() {
        let a = GaussianStats {
            mean: vec![0.0f64, 0.0],
            covariance: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]),
            count: 10,
        };
        let b = GaussianStats {
            mean: vec![0.0, 0.0],
            covariance: Matrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 1.0]]),
            count: 10,
        };
        // Tr(Σa + Σb − 2√(ΣaΣb)) = (1+4−4) + (4+1−4) = 2
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 2.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn frechet_is_symmetric() {
        let mut rng = Rng::new(4);
        let fa = Matrix::from_fn(25, 3, |_, _| rng.normal());
        let fb = Matrix::from_fn(25, 3, |_, _| rng.normal() + 0.3);
        let sa = gaussian_stats(&fa).unwrap();
        let sb = gaussian_stats(&fb).unwrap();
        let ab = frechet_distance(&sa, &sb).unwrap();
        let ba = frechet_distance(&sb, &sa).unwrap();
        assert!((ab - ba).abs() < 1e-8);
        assert!(ab > 0.0);
    }

    #[test]
    fn kid_duplicated_singleton_sets_exactly_zero() {
        let v = vec![0.3f64, -0.7, 1.1];
        let r = Matrix::from_rows(&[v.clone(), v.clone()]);
        let g = Matrix::from_rows(&[v.clone(), v]);
        assert_eq!(kid(&r, &g, 3).unwrap(), 0.0);
    }

    #[test]
    fn kid_two_point_hand_kernel_sum() {
        // X = {0, 0}, Y = {1, 1} in 1-D with (xy + 1)³:
        // within-X = 1, within-Y = 8, cross = 1 → 1 + 8 − 2 = 7
        let r = Matrix::from_rows(&[vec![0.0f64], vec![0.0]]);
        let g = Matrix::from_rows(&[vec![1.0f64], vec![1.0]]);
        assert!((kid(&r, &g, 3).unwrap() - 7.0).abs() < 1e-12);
    }

    /// Plain double-loop estimator for cross-checking.
    fn kid_oracle(r: &Matrix<f64>, g: &Matrix<f64>, degree: i32) -> f64 {
        let d = r.cols() as f64;
        let k = |x: &[f64], y: &[f64]| -> f64 {
            let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            (dot / d + 1.0).powi(degree)
        };
        let m = r.rows();
        let n = g.rows();
        let mut xx = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    xx += k(r.row(i), r.row(j));
                }
            }
        }
        let mut yy = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    yy += k(g.row(i), g.row(j));
                }
            }
        }
        let mut xy = 0.0;
        for i in 0..m {
            for j in 0..n {
                xy += k(r.row(i), g.row(j));
            }
        }
        xx / (m * (m - 1)) as f64 + yy / (n * (n - 1)) as f64 - 2.0 * xy / (m * n) as f64
    }

    #[test]
    fn kid_matches_double_loop_oracle() {
        let mut rng = Rng::new(17);
        let r = Matrix::from_fn(50, 6, |_, _| rng.normal());
        let g = Matrix::from_fn(50, 6, |_, _| rng.normal() * 1.2 + 0.1);
        let got = kid(&r, &g, 3).unwrap();
        let want = kid_oracle(&r, &g, 3);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn kid_unbiased_near_zero_for_same_distribution() {
        // 200 resamplings from one distribution: mean estimate within 3
        // standard errors of zero.
        let mut rng = Rng::new(29);
        let mut estimates = Vec::with_capacity(200);
        for _ in 0..200 {
            let a = Matrix::from_fn(24, 4, |_, _| rng.normal());
            let b = Matrix::from_fn(24, 4, |_, _| rng.normal());
            estimates.push(kid(&a, &b, 3).unwrap());
        }
        let mean: f64 = estimates.iter().sum::<f64>() / estimates.len() as f64;
        let var: f64 = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
            / (estimates.len() - 1) as f64;
        let se = (var / estimates.len() as f64).sqrt();
        assert!(
            mean.abs() <= 3.0 * se,
            "mean {mean} exceeds 3·SE {}",
            3.0 * se
        );
    }

    #[test]
    fn kid_small_sets_rejected() {
        let r = Matrix::from_rows(&[vec![1.0]]);
        let g = Matrix::from_rows(&[vec![1.0], vec![2.0]]);
        assert!(kid(&r, &g, 3).is_err());
    }
}
