//! 8-bit RGB / grayscale images with PNG I/O and tensor conversions.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&color);
        }
        RgbImage {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, color: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
        let mut encoder = png::Encoder::new(
            BufWriter::new(file),
            self.width as u32,
            self.height as u32,
        );
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let (width, height, data, color) = decode_png(path)?;
        let pixels = match color {
            png::ColorType::Rgb => data,
            png::ColorType::Rgba => data
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
            png::ColorType::Grayscale => data.iter().flat_map(|&v| [v, v, v]).collect(),
            other => {
                return Err(CoreError::Format(format!(
                    "{}: unsupported PNG color type {other:?}",
                    path.display()
                )))
            }
        };
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    /// C×H×W buffer scaled to [-1, 1].
    pub fn to_unit_tensor<T: Scalar>(&self) -> Vec<T> {
        let (w, h) = (self.width, self.height);
        let mut out = vec![T::zero(); 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let p = self.get(x, y);
                for c in 0..3 {
                    out[c * h * w + y * w + x] =
                        T::from_f64(f64::from(p[c]) / 127.5 - 1.0);
                }
            }
        }
        out
    }

    /// Inverse of [`Self::to_unit_tensor`]; values are clamped to [-1, 1].
    pub fn from_unit_tensor<T: Scalar>(values: &[T], height: usize, width: usize) -> Self {
        let mut img = RgbImage::filled(width, height, [0, 0, 0]);
        for y in 0..height {
            for x in 0..width {
                let mut p = [0u8; 3];
                for (c, v) in p.iter_mut().enumerate() {
                    let t = values[c * height * width + y * width + x]
                        .as_f64()
                        .clamp(-1.0, 1.0);
                    *v = ((t + 1.0) * 127.5).round() as u8;
                }
                img.set(x, y, p);
            }
        }
        img
    }

    /// Grayscale matrix in [0, 255] using the 0.299/0.587/0.114 luma weights.
    pub fn luma_matrix<T: Scalar>(&self) -> Matrix<T> {
        Matrix::from_fn(self.height, self.width, |y, x| {
            let p = self.get(x, y);
            T::from_f64(
                0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]),
            )
        })
    }
}

impl GrayImage {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
        let mut encoder = png::Encoder::new(
            BufWriter::new(file),
            self.width as u32,
            self.height as u32,
        );
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let (width, height, data, color) = decode_png(path)?;
        let pixels = match color {
            png::ColorType::Grayscale => data,
            png::ColorType::Rgb => data.chunks_exact(3).map(|p| p[0]).collect(),
            other => {
                return Err(CoreError::Format(format!(
                    "{}: unsupported PNG color type {other:?} for mask",
                    path.display()
                )))
            }
        };
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }
}

fn decode_png(path: &Path) -> Result<(usize, usize, Vec<u8>, png::ColorType)> {
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![
        0;
        reader
            .output_buffer_size()
            .ok_or_else(|| CoreError::Format(format!("{}: oversized PNG", path.display())))?
    ];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(CoreError::Format(format!(
            "{}: only 8-bit PNGs supported",
            path.display()
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((
        info.width as usize,
        info.height as usize,
        buf,
        info.color_type,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_rgb() {
        let dir = std::env::temp_dir().join("topostain_img_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut img = RgbImage::filled(5, 3, [10, 20, 30]);
        img.set(2, 1, [200, 100, 50]);
        let path = dir.join("roundtrip.png");
        img.save_png(&path).unwrap();
        let back = RgbImage::load_png(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn png_roundtrip_gray() {
        let dir = std::env::temp_dir().join("topostain_img_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut img = GrayImage::filled(4, 4, 0);
        img.set(1, 2, 255);
        let path = dir.join("mask.png");
        img.save_png(&path).unwrap();
        assert_eq!(GrayImage::load_png(&path).unwrap(), img);
    }

    #[test]
    fn unit_tensor_roundtrip() {
        let mut img = RgbImage::filled(4, 4, [0, 128, 255]);
        img.set(0, 0, [13, 77, 201]);
        let t: Vec<f64> = img.to_unit_tensor();
        assert!(t.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = RgbImage::from_unit_tensor(&t, 4, 4);
        assert_eq!(back, img);
    }

    #[test]
    fn luma_weights() {
        let img = RgbImage::filled(1, 1, [255, 0, 0]);
        let m: Matrix<f64> = img.luma_matrix();
        assert!((m.get(0, 0) - 0.299 * 255.0).abs() < 1e-12);
    }
}
