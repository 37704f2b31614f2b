//! Beer-Lambert stain separation: optical density, H/DAB deconvolution,
//! forward synthesis, and positive-area measurement.

use crate::error::{CoreError, Result};
use crate::image::RgbImage;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// 3×3 optical-density matrix; rows are unit vectors for hematoxylin, DAB
/// and the residual channel.
#[derive(Debug, Clone)]
pub struct StainVectors<T: Scalar> {
    rows: Matrix<T>,
    inverse: Matrix<T>,
}

impl<T: Scalar> StainVectors<T> {
    pub fn new(hematoxylin: [f64; 3], dab: [f64; 3], residual: Option<[f64; 3]>) -> Result<Self> {
        let h = normalize3(hematoxylin)?;
        let d = normalize3(dab)?;
        let r = match residual {
            Some(r) => normalize3(r)?,
            None => normalize3(cross(h, d))?,
        };
        let rows = Matrix::from_rows(&[
            h.iter().map(|&v| T::from_f64(v)).collect(),
            d.iter().map(|&v| T::from_f64(v)).collect(),
            r.iter().map(|&v| T::from_f64(v)).collect(),
        ]);
        let inverse = invert3(&rows)?;
        let cond = rows.frobenius_norm() * inverse.frobenius_norm();
        if cond.as_f64() >= 1e6 {
            return Err(CoreError::Degenerate(format!(
                "stain matrix condition number {cond} too large"
            )));
        }
        Ok(StainVectors { rows, inverse })
    }

    /// Standard H-DAB optical-density vectors with an orthogonal residual.
    pub fn h_dab() -> Self {
        StainVectors::new([0.650, 0.704, 0.286], [0.269, 0.568, 0.777], None)
            .expect("reference H-DAB vectors are well conditioned")
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.rows
    }

    pub fn inverse(&self) -> &Matrix<T> {
        &self.inverse
    }
}

fn normalize3(v: [f64; 3]) -> Result<[f64; 3]> {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm == 0.0 {
        return Err(CoreError::Degenerate("zero stain vector".into()));
    }
    Ok([v[0] / norm, v[1] / norm, v[2] / norm])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn invert3<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    let a = |i: usize, j: usize| m.get(i, j);
    let det = a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
        - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
        + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
    if det.abs().as_f64() < 1e-12 {
        return Err(CoreError::Degenerate(
            "singular stain matrix: vectors are coplanar".into(),
        ));
    }
    let inv_det = T::one() / det;
    let mut out = Matrix::zeros(3, 3);
    for i in 0..3 {
        for j in 0..3 {
            let (r1, r2) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c1, c2) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = a(r1, c1) * a(r2, c2) - a(r1, c2) * a(r2, c1);
            let sign = if (i + j) % 2 == 0 { T::one() } else { -T::one() };
            // adjugate transposes the cofactor matrix
            out.set(j, i, sign * minor * inv_det);
        }
    }
    Ok(out)
}

/// Per-channel optical density of an 8-bit image:
/// OD = -log10((pixel + 1)/256). Returns an (H·W)×3 matrix.
pub fn optical_density<T: Scalar>(rgb: &RgbImage) -> Matrix<T> {
    let n = rgb.width * rgb.height;
    let mut out = Matrix::zeros(n, 3);
    for i in 0..n {
        for c in 0..3 {
            let p = f64::from(rgb.pixels[i * 3 + c]);
            out.set(i, c, T::from_f64(-((p + 1.0) / 256.0).log10()));
        }
    }
    out
}

/// Unmix an image into hematoxylin and DAB concentration maps (clamped at
/// zero), each H×W.
pub fn stain_deconvolve<T: Scalar>(
    rgb: &RgbImage,
    sv: &StainVectors<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let od = optical_density::<T>(rgb);
    // od = c · S  ⟹  c = od · S⁻¹
    let conc = od.matmul(sv.inverse())?;
    let mut h = Matrix::zeros(rgb.height, rgb.width);
    let mut dab = Matrix::zeros(rgb.height, rgb.width);
    for y in 0..rgb.height {
        for x in 0..rgb.width {
            let i = y * rgb.width + x;
            h.set(y, x, conc.get(i, 0).max(T::zero()));
            dab.set(y, x, conc.get(i, 1).max(T::zero()));
        }
    }
    Ok((h, dab))
}

/// Render an 8-bit image from hematoxylin/DAB concentration maps via the
/// forward Beer-Lambert model (rounded to the nearest code).
pub fn synthesize_from_concentrations<T: Scalar>(
    h: &Matrix<T>,
    dab: &Matrix<T>,
    sv: &StainVectors<T>,
) -> Result<RgbImage> {
    if h.shape() != dab.shape() {
        return Err(CoreError::DimensionMismatch {
            op: "synthesize_from_concentrations",
            lhs: vec![h.rows(), h.cols()],
            rhs: vec![dab.rows(), dab.cols()],
        });
    }
    let (rows, cols) = h.shape();
    let mut img = RgbImage::filled(cols, rows, [0, 0, 0]);
    for y in 0..rows {
        for x in 0..cols {
            let ch = h.get(y, x).as_f64();
            let cd = dab.get(y, x).as_f64();
            let mut p = [0u8; 3];
            for c in 0..3 {
                let od = ch * sv.rows.get(0, c).as_f64() + cd * sv.rows.get(1, c).as_f64();
                let v = 256.0 * 10f64.powf(-od) - 1.0;
                p[c] = v.round().clamp(0.0, 255.0) as u8;
            }
            img.set(x, y, p);
        }
    }
    Ok(img)
}

/// Fraction of pixels whose DAB concentration exceeds the threshold.
pub fn positive_area_ratio<T: Scalar>(dab: &Matrix<T>, threshold: f64) -> Result<f64> {
    if threshold < 0.0 {
        return Err(CoreError::Degenerate(format!(
            "threshold {threshold} must be nonnegative"
        )));
    }
    let t = T::from_f64(threshold);
    let n = dab.rows() * dab.cols();
    let count = dab.data().iter().filter(|&&v| v > t).count();
    Ok(count as f64 / n as f64)
}

/// Otsu's threshold over a 256-bin histogram of the concentration map.
pub fn otsu_threshold<T: Scalar>(dab: &Matrix<T>) -> f64 {
    let max = dab
        .data()
        .iter()
        .map(|v| v.as_f64())
        .fold(0.0f64, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    let bins = 256usize;
    let mut hist = vec![0usize; bins];
    for v in dab.data() {
        let b = ((v.as_f64() / max) * (bins - 1) as f64).round() as usize;
        hist[b.min(bins - 1)] += 1;
    }
    let total: f64 = hist.iter().sum::<usize>() as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best = (0.0f64, 0usize);
    for t in 0..bins {
        w0 += hist[t] as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0.0 {
            break;
        }
        sum0 += t as f64 * hist[t] as f64;
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, t);
        }
    }
    // boundary between the chosen bin and the next, so values in bin t fall
    // below the returned threshold
    (best.1 as f64 + 0.5) / (bins - 1) as f64 * max
}
