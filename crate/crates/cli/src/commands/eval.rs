use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use topostain_core::gan::features::{frozen_extractor, set_embeddings};
use topostain_core::image::{GrayImage, RgbImage};
use topostain_core::matrix::Matrix;
use topostain_core::metrics::{
    self, config_hash, frechet_distance, gaussian_stats, icc, kid, positive_area_ratio, psnr_rgb,
    regression_trend, ssim_rgb, stain_deconvolve, trend_distance_to_ideal, IccVariant,
    MetricReport, SsimConfig, SsimWindow, StainVectors,
};

use crate::config::RunConfig;
use crate::CliError;

fn png_names(dir: &Path) -> Result<BTreeSet<String>, CliError> {
    let mut names = BTreeSet::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if name.ends_with(".png") {
            names.insert(name);
        }
    }
    Ok(names)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < values.len() {
        // infinite entries dominate the mean; spread reported over the
        // finite remainder
        let sd = if finite.len() >= 2 {
            let m = finite.iter().sum::<f64>() / finite.len() as f64;
            (finite.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (finite.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        return (f64::INFINITY, sd);
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let sd = if values.len() >= 2 {
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let generated_dir = PathBuf::from(cfg.str_("generated"));
    let reference_dir = PathBuf::from(cfg.str_("reference"));
    if cfg.str_("generated").is_empty() || cfg.str_("reference").is_empty() {
        return Err(CliError::usage(
            "eval needs --generated DIR and --reference DIR",
        ));
    }

    let shared: Vec<String> = png_names(&generated_dir)?
        .intersection(&png_names(&reference_dir)?)
        .cloned()
        .collect();
    if shared.is_empty() {
        return Err(CliError::metric(
            "no identically-named PNG pairs between the two directories",
        ));
    }

    let mut generated = Vec::with_capacity(shared.len());
    let mut reference = Vec::with_capacity(shared.len());
    for name in &shared {
        generated.push(
            RgbImage::load_png(&generated_dir.join(name)).map_err(|e| CliError::from_core(e, 2))?,
        );
        reference.push(
            RgbImage::load_png(&reference_dir.join(name)).map_err(|e| CliError::from_core(e, 2))?,
        );
    }

    let ssim_cfg = match cfg.str_("ssim_window") {
        "gaussian" => SsimConfig::for_max(255.0),
        "global" => SsimConfig::global(255.0),
        other => {
            return Err(CliError::usage(format!(
                "ssim_window must be `gaussian` or `global`, got `{other}`"
            )))
        }
    };
    if let SsimWindow::Gaussian { size, .. } = ssim_cfg.window {
        if generated[0].width < size || generated[0].height < size {
            return Err(CliError::metric(format!(
                "images smaller than the {size}×{size} SSIM window; use --ssim_window global"
            )));
        }
    }

    let mut ssims = Vec::new();
    let mut psnrs = Vec::new();
    for (g, r) in generated.iter().zip(&reference) {
        ssims.push(ssim_rgb(g, r, &ssim_cfg).map_err(|e| CliError::from_core(e, 4))?);
        psnrs.push(psnr_rgb(g, r).map_err(|e| CliError::from_core(e, 4))?);
    }
    let (ssim_mean, ssim_sd) = mean_sd(&ssims);
    let (psnr_mean, psnr_sd) = mean_sd(&psnrs);

    // feature route: TAGF files when provided, otherwise the frozen toy
    // encoder
    let feats_real: Matrix<f64> = if cfg.str_("features_real").is_empty() {
        let (gen, store) =
            frozen_extractor::<f64>(cfg.usize_("eval_ngf")?, cfg.u64_("eval_feature_seed")?);
        set_embeddings(&gen, &store, &reference).map_err(|e| CliError::from_core(e, 4))?
    } else {
        metrics::read_tagf(Path::new(cfg.str_("features_real")))
            .map_err(|e| CliError::from_core(e, 2))?
    };
    let feats_gen: Matrix<f64> = if cfg.str_("features_generated").is_empty() {
        let (gen, store) =
            frozen_extractor::<f64>(cfg.usize_("eval_ngf")?, cfg.u64_("eval_feature_seed")?);
        set_embeddings(&gen, &store, &generated).map_err(|e| CliError::from_core(e, 4))?
    } else {
        metrics::read_tagf(Path::new(cfg.str_("features_generated")))
            .map_err(|e| CliError::from_core(e, 2))?
    };

    let stats_real = gaussian_stats(&feats_real).map_err(|e| CliError::from_core(e, 4))?;
    let stats_gen = gaussian_stats(&feats_gen).map_err(|e| CliError::from_core(e, 4))?;
    let frechet =
        frechet_distance(&stats_real, &stats_gen).map_err(|e| CliError::from_core(e, 4))?;
    let kid_value = kid(&feats_real, &feats_gen, cfg.u64_("kid_degree")? as u32)
        .map_err(|e| CliError::from_core(e, 4))?;

    let mut report = MetricReport::new(config_hash(&cfg.canonical()));
    let n = shared.len();
    report.push("ssim_mean", ssim_mean, n);
    report.push("ssim_sd", ssim_sd, n);
    report.push("psnr_mean", psnr_mean, n);
    report.push("psnr_sd", psnr_sd, n);
    report.push("frechet_proxy", frechet, n);
    report.push("kid_x1000", kid_value * 1e3, n);

    if cfg.bool_("pathology")? {
        pathology_metrics(cfg, &shared, &generated, &reference, &mut report)?;
    }

    let csv = report.to_csv();
    print!("{csv}");
    let out = PathBuf::from(cfg.str_("out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    let csv_path = out.join("metrics.csv");
    std::fs::write(&csv_path, &csv)
        .map_err(|e| CliError::io(format!("{}: {e}", csv_path.display())))?;
    Ok(())
}

/// DAB positive-area ratios for both sides, their ICC, and the OLS trend of
/// generated against reference ratios.
fn pathology_metrics(
    cfg: &RunConfig,
    names: &[String],
    generated: &[RgbImage],
    reference: &[RgbImage],
    report: &mut MetricReport,
) -> Result<(), CliError> {
    let sv = StainVectors::<f64>::h_dab();
    let threshold = cfg.f64_("dab_threshold")?;
    let use_otsu = cfg.bool_("dab_otsu")?;
    let masks_dir = cfg.str_("masks").to_string();

    let ratio_of = |img: &RgbImage| -> Result<f64, CliError> {
        let (_, dab) = stain_deconvolve(img, &sv).map_err(|e| CliError::from_core(e, 4))?;
        let thr = if use_otsu {
            metrics::otsu_threshold(&dab)
        } else {
            threshold
        };
        positive_area_ratio(&dab, thr).map_err(|e| CliError::from_core(e, 4))
    };

    let mut gen_ratios = Vec::with_capacity(names.len());
    let mut ref_ratios = Vec::with_capacity(names.len());
    for ((name, g), r) in names.iter().zip(generated).zip(reference) {
        gen_ratios.push(ratio_of(g)?);
        if masks_dir.is_empty() {
            ref_ratios.push(ratio_of(r)?);
        } else {
            // ground-truth route: positive pixels of the stored mask
            let mask_name = name.replace("ihc_", "mask_");
            let mask = GrayImage::load_png(&Path::new(&masks_dir).join(&mask_name))
                .map_err(|e| CliError::from_core(e, 2))?;
            let positive = mask.pixels.iter().filter(|&&v| v >= 128).count();
            ref_ratios.push(positive as f64 / mask.pixels.len() as f64);
        }
    }

    let variant = match cfg.str_("icc_variant") {
        "icc2_1" => IccVariant::TwoWayRandomAbsolute,
        "icc3_1" => IccVariant::TwoWayMixedConsistency,
        other => {
            return Err(CliError::usage(format!(
                "icc_variant must be `icc2_1` or `icc3_1`, got `{other}`"
            )))
        }
    };
    let icc_value =
        icc(&gen_ratios, &ref_ratios, variant).map_err(|e| CliError::from_core(e, 4))?;
    let (slope, intercept) =
        regression_trend(&ref_ratios, &gen_ratios).map_err(|e| CliError::from_core(e, 4))?;

    let n = names.len();
    let (gen_mean, _) = mean_sd(&gen_ratios);
    let (ref_mean, _) = mean_sd(&ref_ratios);
    report.push("par_generated_mean", gen_mean, n);
    report.push("par_reference_mean", ref_mean, n);
    report.push("par_icc", icc_value, n);
    report.push("trend_slope", slope, n);
    report.push("trend_intercept", intercept, n);
    report.push("trend_dist", trend_distance_to_ideal(slope, intercept), n);
    Ok(())
}
