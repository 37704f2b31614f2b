//! Quantitative evaluation toolkit: SSIM, PSNR, Fréchet distance, KID, stain
//! deconvolution with positive-area ratios, ICC agreement, and OLS trend
//! fitting, plus the TAGF feature-file format and a CSV metric report.

mod agreement;
mod distance;
mod features;
mod ssim;
mod stain;

pub use agreement::{icc, regression_trend, trend_distance_to_ideal, IccVariant};
pub use distance::{frechet_distance, gaussian_stats, kid, symmetric_eigen, GaussianStats};
pub use features::{read_tagf, write_tagf, TAGF_VERSION};
pub use ssim::{psnr, psnr_rgb, ssim, ssim_rgb, SsimConfig, SsimWindow};
pub use stain::{
    optical_density, otsu_threshold, positive_area_ratio, stain_deconvolve,
    synthesize_from_concentrations, StainVectors,
};

use std::fmt::Write as _;

/// Named scalar results serializable to CSV.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    rows: Vec<(String, f64, usize)>,
    config_hash: String,
}

pub const METRIC_CSV_HEADER: &str = "metric,value,n_samples,config_hash";

impl MetricReport {
    pub fn new(config_hash: impl Into<String>) -> Self {
        MetricReport {
            rows: Vec::new(),
            config_hash: config_hash.into(),
        }
    }

    pub fn push(&mut self, metric: impl Into<String>, value: f64, n_samples: usize) {
        self.rows.push((metric.into(), value, n_samples));
    }

    pub fn rows(&self) -> &[(String, f64, usize)] {
        &self.rows
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|(name, _, _)| name == metric)
            .map(|&(_, v, _)| v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRIC_CSV_HEADER);
        out.push('\n');
        for (name, value, n) in &self.rows {
            let _ = writeln!(out, "{name},{value},{n},{}", self.config_hash);
        }
        out
    }
}

/// FNV-1a hash of a canonical config string, hex-encoded.
pub fn config_hash(canonical: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in canonical.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
