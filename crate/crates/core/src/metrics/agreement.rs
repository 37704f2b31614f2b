//! Agreement statistics between paired measurement sequences: intraclass
//! correlation and ordinary-least-squares trend.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IccVariant {
    /// ICC(2,1): two-way random effects, absolute agreement, single measures.
    TwoWayRandomAbsolute,
    /// ICC(3,1): two-way mixed effects, consistency, single measures.
    TwoWayMixedConsistency,
}

/// Intraclass correlation between two raters over n subjects.
pub fn icc<T: Scalar>(a: &[T], b: &[T], variant: IccVariant) -> Result<T> {
    let n = a.len();
    if n != b.len() {
        return Err(CoreError::DimensionMismatch {
            op: "icc",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    if n < 3 {
        return Err(CoreError::Degenerate(format!(
            "ICC needs at least 3 subjects, got {n}"
        )));
    }
    let k = T::from_f64(2.0);
    let nf = T::from_usize(n);
    let grand = (a.iter().copied().sum::<T>() + b.iter().copied().sum::<T>()) / (k * nf);
    let col_a = a.iter().copied().sum::<T>() / nf;
    let col_b = b.iter().copied().sum::<T>() / nf;

    let mut ss_rows = T::zero();
    let mut ss_err = T::zero();
    for i in 0..n {
        let row_mean = (a[i] + b[i]) / k;
        let dr = row_mean - grand;
        ss_rows = ss_rows + k * dr * dr;
        let ea = a[i] - row_mean - col_a + grand;
        let eb = b[i] - row_mean - col_b + grand;
        ss_err = ss_err + ea * ea + eb * eb;
    }
    let dc_a = col_a - grand;
    let dc_b = col_b - grand;
    let ss_cols = nf * (dc_a * dc_a + dc_b * dc_b);

    let msr = ss_rows / T::from_usize(n - 1);
    let msc = ss_cols / (k - T::one());
    let mse = ss_err / (T::from_usize(n - 1) * (k - T::one()));

    let denom = match variant {
        IccVariant::TwoWayRandomAbsolute => {
            msr + (k - T::one()) * mse + k / nf * (msc - mse)
        }
        IccVariant::TwoWayMixedConsistency => msr + (k - T::one()) * mse,
    };
    if denom.abs().as_f64() < 1e-300 {
        return Err(CoreError::Degenerate(
            "ICC undefined: both sequences have zero variance".into(),
        ));
    }
    Ok((msr - mse) / denom)
}

/// Ordinary least squares fit y ≈ slope·x + intercept.
pub fn regression_trend<T: Scalar>(x: &[T], y: &[T]) -> Result<(T, T)> {
    let n = x.len();
    if n != y.len() {
        return Err(CoreError::DimensionMismatch {
            op: "regression_trend",
            lhs: vec![x.len()],
            rhs: vec![y.len()],
        });
    }
    if n < 2 {
        return Err(CoreError::Degenerate(format!(
            "trend fit needs at least 2 points, got {n}"
        )));
    }
    let nf = T::from_usize(n);
    let mean_x = x.iter().copied().sum::<T>() / nf;
    let mean_y = y.iter().copied().sum::<T>() / nf;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for i in 0..n {
        let dx = x[i] - mean_x;
        sxx = sxx + dx * dx;
        sxy = sxy + dx * (y[i] - mean_y);
    }
    if sxx == T::zero() {
        return Err(CoreError::Degenerate(
            "trend fit undefined: x has zero variance".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    Ok((slope, intercept))
}

/// Euclidean distance from (slope, intercept) to the ideal (1, 0).
pub fn trend_distance_to_ideal<T: Scalar>(slope: T, intercept: T) -> T {
    let ds = slope - T::one();
    (ds * ds + intercept * intercept).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn icc_perfect_agreement_is_one() {
        let a = [0.1f64, 0.4, 0.7, 0.2, 0.9];
        for variant in [
            IccVariant::TwoWayRandomAbsolute,
            IccVariant::TwoWayMixedConsistency,
        ] {
            let v = icc(&a, &a, variant).unwrap();
            assert!((v - 1.0).abs() < 1e-9, "{variant:?}: {v}");
        }
    }

    #[test]
    fn icc_absolute_agreement_punishes_offset() {
        let a = [0.1, 0.4, 0.7, 0.2, 0.9, 0.5];
        let b: Vec<f64> = a.iter().map(|v| v + 5.0).collect();
        let absolute = icc(&a, &b, IccVariant::TwoWayRandomAbsolute).unwrap();
        assert!(absolute < 0.2, "absolute-agreement ICC {absolute}");
        // the consistency variant ignores the offset entirely
        let consistency = icc(&a, &b, IccVariant::TwoWayMixedConsistency).unwrap();
        assert!((consistency - 1.0).abs() < 1e-9);
    }

    /// Independent ANOVA decomposition over the stacked n×2 table.
    fn icc21_oracle(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let k = 2.0;
        let all: Vec<f64> = a.iter().chain(b).copied().collect();
        let grand = all.iter().sum::<f64>() / all.len() as f64;
        let mut ss_total = 0.0;
        for v in &all {
            ss_total += (v - grand).powi(2);
        }
        let mut ss_rows = 0.0;
        for i in 0..n {
            let rm = (a[i] + b[i]) / 2.0;
            ss_rows += k * (rm - grand).powi(2);
        }
        let ca = a.iter().sum::<f64>() / n as f64;
        let cb = b.iter().sum::<f64>() / n as f64;
        let ss_cols = n as f64 * ((ca - grand).powi(2) + (cb - grand).powi(2));
        let ss_err = ss_total - ss_rows - ss_cols;
        let msr = ss_rows / (n - 1) as f64;
        let msc = ss_cols / (k - 1.0);
        let mse = ss_err / ((n - 1) as f64 * (k - 1.0));
        (msr - mse) / (msr + (k - 1.0) * mse + k / n as f64 * (msc - mse))
    }

    #[test]
    fn icc_matches_anova_oracle_on_fixed_table() {
        // six-subject table in the style of the classic rater examples
        let a = [9.0, 6.0, 8.0, 7.0, 10.0, 6.0];
        let b = [2.0, 1.0, 4.0, 1.0, 5.0, 2.0];
        let got = icc(&a, &b, IccVariant::TwoWayRandomAbsolute).unwrap();
        let want = icc21_oracle(&a, &b);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn icc_matches_oracle_on_random_sequences() {
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let a: Vec<f64> = (0..12).map(|_| rng.uniform(0.0, 1.0)).collect();
            let b: Vec<f64> = a
                .iter()
                .map(|v| v + 0.1 * rng.normal())
                .collect();
            let got = icc(&a, &b, IccVariant::TwoWayRandomAbsolute).unwrap();
            let want = icc21_oracle(&a, &b);
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn icc_is_symmetric() {
        let mut rng = Rng::new(5);
        let a: Vec<f64> = (0..10).map(|_| rng.uniform(0.0, 1.0)).collect();
        let b: Vec<f64> = (0..10).map(|_| rng.uniform(0.0, 1.0)).collect();
        let ab = icc(&a, &b, IccVariant::TwoWayRandomAbsolute).unwrap();
        let ba = icc(&b, &a, IccVariant::TwoWayRandomAbsolute).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn icc_rejects_degenerate_input() {
        assert!(icc(&[1.0, 2.0], &[1.0, 2.0], IccVariant::TwoWayRandomAbsolute).is_err());
        assert!(icc(
            &[1.0, 2.0, 3.0],
            &[1.0, 2.0],
            IccVariant::TwoWayRandomAbsolute
        )
        .is_err());
        assert!(icc(
            &[2.0, 2.0, 2.0, 2.0],
            &[2.0, 2.0, 2.0, 2.0],
            IccVariant::TwoWayRandomAbsolute
        )
        .is_err());
    }

    #[test]
    fn trend_identity_is_exact() {
        let x = [0.1, 0.5, 0.8, 0.3];
        let (slope, intercept) = regression_trend(&x, &x).unwrap();
        assert_eq!(slope, 1.0);
        assert_eq!(intercept, 0.0);
        assert_eq!(trend_distance_to_ideal(slope, intercept), 0.0);
    }

    #[test]
    fn trend_exact_affine_fit() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let (slope, intercept) = regression_trend(&x, &y).unwrap();
        assert!((slope - 2.0).abs() < 1e-12);
        assert!((intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn trend_matches_normal_equations_oracle() {
        let mut rng = Rng::new(8);
        let x: Vec<f64> = (0..30).map(|_| rng.uniform(0.0, 1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.7 * v - 0.2 + 0.05 * rng.normal()).collect();
        let (slope, intercept) = regression_trend(&x, &y).unwrap();
        // normal equations on raw sums
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let slope_o = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept_o = (sy - slope_o * sx) / n;
        assert!((slope - slope_o).abs() < 1e-10);
        assert!((intercept - intercept_o).abs() < 1e-10);
    }

    #[test]
    fn trend_rejects_degenerate_x() {
        assert!(regression_trend(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(regression_trend(&[1.0], &[1.0]).is_err());
    }
}
