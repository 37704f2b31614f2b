//! Structural similarity and peak signal-to-noise ratio.

use crate::error::{CoreError, Result};
use crate::image::RgbImage;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SsimWindow {
    /// One window spanning the whole image (the bare formula).
    Global,
    /// Sliding Gaussian-weighted window (standard practice).
    Gaussian { size: usize, sigma: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct SsimConfig {
    pub c1: f64,
    pub c2: f64,
    pub max_value: f64,
    pub window: SsimWindow,
}

impl SsimConfig {
    /// C1 = (0.01·MAX)², C2 = (0.03·MAX)², 11×11 Gaussian window σ = 1.5.
    pub fn for_max(max_value: f64) -> Self {
        SsimConfig {
            c1: (0.01 * max_value).powi(2),
            c2: (0.03 * max_value).powi(2),
            max_value,
            window: SsimWindow::Gaussian {
                size: 11,
                sigma: 1.5,
            },
        }
    }

    pub fn global(max_value: f64) -> Self {
        SsimConfig {
            window: SsimWindow::Global,
            ..Self::for_max(max_value)
        }
    }
}

fn window_score<T: Scalar>(
    xs: &[T],
    ys: &[T],
    weights: &[T],
    c1: T,
    c2: T,
) -> T {
    let mut mu_x = T::zero();
    let mut mu_y = T::zero();
    for i in 0..xs.len() {
        mu_x = mu_x + weights[i] * xs[i];
        mu_y = mu_y + weights[i] * ys[i];
    }
    let mut var_x = T::zero();
    let mut var_y = T::zero();
    let mut cov = T::zero();
    for i in 0..xs.len() {
        let dx = xs[i] - mu_x;
        let dy = ys[i] - mu_y;
        var_x = var_x + weights[i] * (dx * dx);
        var_y = var_y + weights[i] * (dy * dy);
        // parenthesized so that ssim(x, y) == ssim(y, x) bitwise
        cov = cov + weights[i] * (dx * dy);
    }
    let two = T::from_f64(2.0);
    let num = (two * mu_x * mu_y + c1) * (two * cov + c2);
    let den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
    num / den
}

/// SSIM over grayscale matrices. Gaussian mode averages the per-window score
/// over every position where the full window fits; global mode evaluates the
/// formula once with uniform weights.
pub fn ssim<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>, cfg: &SsimConfig) -> Result<T> {
    if x.shape() != y.shape() {
        return Err(CoreError::DimensionMismatch {
            op: "ssim",
            lhs: vec![x.rows(), x.cols()],
            rhs: vec![y.rows(), y.cols()],
        });
    }
    let c1 = T::from_f64(cfg.c1);
    let c2 = T::from_f64(cfg.c2);
    match cfg.window {
        SsimWindow::Global => {
            let n = x.rows() * x.cols();
            let w = vec![T::one() / T::from_usize(n); n];
            Ok(window_score(x.data(), y.data(), &w, c1, c2))
        }
        SsimWindow::Gaussian { size, sigma } => {
            if x.rows() < size || x.cols() < size {
                return Err(CoreError::Shape {
                    op: "ssim",
                    detail: format!(
                        "image {}×{} smaller than the {size}×{size} window",
                        x.rows(),
                        x.cols()
                    ),
                });
            }
            let weights = gaussian_kernel::<T>(size, sigma);
            let mut xs = vec![T::zero(); size * size];
            let mut ys = vec![T::zero(); size * size];
            let mut total = T::zero();
            let mut count = 0usize;
            for wy in 0..=(x.rows() - size) {
                for wx in 0..=(x.cols() - size) {
                    for dy in 0..size {
                        for dx in 0..size {
                            xs[dy * size + dx] = x.get(wy + dy, wx + dx);
                            ys[dy * size + dx] = y.get(wy + dy, wx + dx);
                        }
                    }
                    total = total + window_score(&xs, &ys, &weights, c1, c2);
                    count += 1;
                }
            }
            Ok(total / T::from_usize(count))
        }
    }
}

fn gaussian_kernel<T: Scalar>(size: usize, sigma: f64) -> Vec<T> {
    let half = (size as f64 - 1.0) / 2.0;
    let mut w = vec![0.0f64; size * size];
    let mut sum = 0.0;
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - half;
            let dx = x as f64 - half;
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            w[y * size + x] = v;
            sum += v;
        }
    }
    w.iter().map(|&v| T::from_f64(v / sum)).collect()
}

/// SSIM over RGB images after luma conversion.
pub fn ssim_rgb(x: &RgbImage, y: &RgbImage, cfg: &SsimConfig) -> Result<f64> {
    ssim(&x.luma_matrix::<f64>(), &y.luma_matrix::<f64>(), cfg)
}

/// 10·log10(MAX²/MSE); +∞ for identical inputs.
pub fn psnr<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>, max_value: f64) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(CoreError::DimensionMismatch {
            op: "psnr",
            lhs: vec![x.rows(), x.cols()],
            rhs: vec![y.rows(), y.cols()],
        });
    }
    let n = x.rows() * x.cols();
    let mse: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / mse).log10())
}

/// PSNR across all three RGB channels (MAX = 255).
pub fn psnr_rgb(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    if x.width != y.width || x.height != y.height {
        return Err(CoreError::DimensionMismatch {
            op: "psnr",
            lhs: vec![x.height, x.width],
            rhs: vec![y.height, y.width],
        });
    }
    let mse: f64 = x
        .pixels
        .iter()
        .zip(&y.pixels)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum::<f64>()
        / x.pixels.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}
