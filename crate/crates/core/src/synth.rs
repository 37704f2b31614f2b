//! Deterministic synthetic weakly-paired stain image pairs.
//!
//! Each pair shares a latent layout of elliptical gland structures. The
//! source image renders every structure in a nuclei palette on a pale
//! background; the target image renders the designated positive subset in a
//! DAB-like brown and the rest in a hematoxylin-like blue, then shifts and
//! rotates the whole layout to emulate the misalignment of adjacent tissue
//! sections. The ground-truth positive mask stays aligned with the
//! unjittered layout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::image::{GrayImage, RgbImage};
use crate::rng::Rng;

pub const HE_BACKGROUND: [u8; 3] = [242, 230, 240];
pub const HE_NUCLEI: [u8; 3] = [90, 60, 140];
pub const IHC_POSITIVE: [u8; 3] = [150, 100, 50];
pub const IHC_NEGATIVE: [u8; 3] = [70, 80, 160];
pub const IHC_BACKGROUND: [u8; 3] = [244, 242, 238];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub size: usize,
    /// Gland/blob structures per image.
    pub structures: usize,
    /// Max |translation| in pixels applied to the target image.
    pub jitter_translate: f64,
    /// Max |rotation| in degrees applied to the target image.
    pub jitter_rot_deg: f64,
    /// Target fraction of structure area rendered positive.
    pub positive_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 64,
            structures: 6,
            jitter_translate: 3.0,
            jitter_rot_deg: 6.0,
            positive_fraction: 0.4,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(CoreError::Degenerate(format!(
                "image size {} too small",
                self.size
            )));
        }
        if self.jitter_translate >= self.size as f64 / 4.0 {
            return Err(CoreError::Degenerate(format!(
                "jitter translation {} must stay below size/4 = {}",
                self.jitter_translate,
                self.size as f64 / 4.0
            )));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(CoreError::Degenerate(format!(
                "positive fraction {} outside [0, 1]",
                self.positive_fraction
            )));
        }
        if self.structures == 0 {
            return Err(CoreError::Degenerate("need at least one structure".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub tx: f64,
    pub ty: f64,
    pub rot_deg: f64,
}

#[derive(Debug, Clone)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    positive: bool,
    shade: [i16; 3],
}

impl Ellipse {
    #[inline]
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let (sin, cos) = self.theta.sin_cos();
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        (u / self.a) * (u / self.a) + (v / self.b) * (v / self.b) <= 1.0
    }

    fn area(&self) -> f64 {
        std::f64::consts::PI * self.a * self.b
    }
}

#[derive(Debug, Clone)]
pub struct PairSample {
    pub he: RgbImage,
    pub ihc: RgbImage,
    pub mask: GrayImage,
    pub jitter: Jitter,
    /// Positive mask pixels over total pixels.
    pub positive_area_fraction: f64,
}

fn shaded(base: [u8; 3], shade: [i16; 3]) -> [u8; 3] {
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (i16::from(base[c]) + shade[c]).clamp(0, 255) as u8;
    }
    out
}

/// Generate one weakly-paired sample. Deterministic in (cfg.seed, index);
/// indices use independent derived streams so pairs may be generated in any
/// order or in parallel.
pub fn generate_pair(cfg: &SynthConfig, index: u64) -> Result<PairSample> {
    cfg.validate()?;
    let mut rng = Rng::stream(cfg.seed, 0x5041_4952 ^ index.wrapping_mul(0x9E37));
    let size = cfg.size as f64;

    // Layout: rejection-sample non-overlapping ellipses. A structure that
    // cannot be placed after the attempt budget is skipped.
    let mut ellipses: Vec<Ellipse> = Vec::new();
    for _ in 0..cfg.structures {
        let mut placed = false;
        for _attempt in 0..40 {
            let a = rng.uniform(0.07, 0.16) * size;
            let b = rng.uniform(0.55, 0.95) * a;
            let cx = rng.uniform(0.18, 0.82) * size;
            let cy = rng.uniform(0.18, 0.82) * size;
            let theta = rng.uniform(0.0, std::f64::consts::PI);
            let clear = ellipses.iter().all(|e| {
                let d = ((e.cx - cx).powi(2) + (e.cy - cy).powi(2)).sqrt();
                d > e.a + a + 2.0
            });
            if clear {
                ellipses.push(Ellipse {
                    cx,
                    cy,
                    a,
                    b,
                    theta,
                    positive: false,
                    shade: [0; 3],
                });
                placed = true;
                break;
            }
        }
        if !placed {
            break;
        }
    }
    if ellipses.is_empty() {
        return Err(CoreError::Degenerate(
            "could not place any structure".into(),
        ));
    }

    // Positive structures form a spatially coherent territory: structures
    // are ranked by their projection onto a per-pair direction and marked
    // from that side until the pair's target share of structure area is
    // covered. The target share itself varies around the configured
    // fraction, so the dataset carries a broad per-image positivity
    // distribution.
    let total_area: f64 = ellipses.iter().map(Ellipse::area).sum();
    let spread = 0.25f64.min(cfg.positive_fraction).min(1.0 - cfg.positive_fraction);
    let pair_fraction = cfg.positive_fraction + rng.uniform(-spread, spread);
    let target = pair_fraction * total_area;
    let direction = rng.uniform(0.0, std::f64::consts::TAU);
    let (dsin, dcos) = direction.sin_cos();
    let mut order: Vec<usize> = (0..ellipses.len()).collect();
    order.sort_by(|&a, &b| {
        let pa = ellipses[a].cx * dcos + ellipses[a].cy * dsin;
        let pb = ellipses[b].cx * dcos + ellipses[b].cy * dsin;
        pa.partial_cmp(&pb).unwrap()
    });
    let mut covered = 0.0;
    for &i in &order {
        if covered < target {
            ellipses[i].positive = true;
            covered += ellipses[i].area();
        }
    }

    for e in ellipses.iter_mut() {
        e.shade = [
            rng.uniform(-8.0, 8.0).round() as i16,
            rng.uniform(-8.0, 8.0).round() as i16,
            rng.uniform(-8.0, 8.0).round() as i16,
        ];
    }

    let jitter = Jitter {
        tx: rng.uniform(-cfg.jitter_translate, cfg.jitter_translate),
        ty: rng.uniform(-cfg.jitter_translate, cfg.jitter_translate),
        rot_deg: rng.uniform(-cfg.jitter_rot_deg, cfg.jitter_rot_deg),
    };

    let mut he = RgbImage::filled(cfg.size, cfg.size, HE_BACKGROUND);
    let mut ihc = RgbImage::filled(cfg.size, cfg.size, IHC_BACKGROUND);
    let mut mask = GrayImage::filled(cfg.size, cfg.size, 0);

    let center = size / 2.0;
    let rot = jitter.rot_deg.to_radians();
    let (jsin, jcos) = rot.sin_cos();
    let mut positive_pixels = 0usize;

    for py in 0..cfg.size {
        for px in 0..cfg.size {
            let x = px as f64 + 0.5;
            let y = py as f64 + 0.5;

            // source image and mask live in layout coordinates
            if let Some(e) = ellipses.iter().find(|e| e.contains(x, y)) {
                he.set(px, py, shaded(HE_NUCLEI, e.shade));
                if e.positive {
                    mask.set(px, py, 255);
                    positive_pixels += 1;
                }
            }

            // target image samples the layout through the inverse jitter
            let dx = x - center - jitter.tx;
            let dy = y - center - jitter.ty;
            let lx = dx * jcos + dy * jsin + center;
            let ly = -dx * jsin + dy * jcos + center;
            if let Some(e) = ellipses.iter().find(|e| e.contains(lx, ly)) {
                let base = if e.positive { IHC_POSITIVE } else { IHC_NEGATIVE };
                ihc.set(px, py, shaded(base, e.shade));
            }
        }
    }

    Ok(PairSample {
        he,
        ihc,
        mask,
        jitter,
        positive_area_fraction: positive_pixels as f64 / (cfg.size * cfg.size) as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub index: u64,
    pub tx: f64,
    pub ty: f64,
    pub rot_deg: f64,
    pub positive_fraction: f64,
}

pub const MANIFEST_HEADER: &str = "index,tx,ty,rot_deg,positive_fraction";

pub fn pair_file_names(index: u64) -> (String, String, String) {
    (
        format!("he_{index:05}.png"),
        format!("ihc_{index:05}.png"),
        format!("mask_{index:05}.png"),
    )
}

/// Write `count` pairs plus a manifest CSV; returns the manifest path.
/// Regenerating with the same config is byte-identical.
pub fn generate_dataset(cfg: &SynthConfig, count: u64, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir, e))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for index in 0..count {
        let pair = generate_pair(cfg, index)?;
        let (he_name, ihc_name, mask_name) = pair_file_names(index);
        pair.he.save_png(&out_dir.join(he_name))?;
        pair.ihc.save_png(&out_dir.join(ihc_name))?;
        pair.mask.save_png(&out_dir.join(mask_name))?;
        let _ = writeln!(
            manifest,
            "{},{},{},{},{}",
            index, pair.jitter.tx, pair.jitter.ty, pair.jitter.rot_deg, pair.positive_area_fraction
        );
    }
    let manifest_path = out_dir.join("manifest.csv");
    fs::write(&manifest_path, manifest).map_err(|e| CoreError::io(&manifest_path, e))?;
    Ok(manifest_path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == MANIFEST_HEADER => {}
        other => {
            return Err(CoreError::Format(format!(
                "{}: bad manifest header {other:?}",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CoreError::Format(format!(
                "{}: line {} has {} fields",
                path.display(),
                ln + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))
        };
        rows.push(ManifestRow {
            index: fields[0]
                .parse()
                .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?,
            tx: parse(fields[1])?,
            ty: parse(fields[2])?,
            rot_deg: parse(fields[3])?,
            positive_fraction: parse(fields[4])?,
        });
    }
    Ok(rows)
}
