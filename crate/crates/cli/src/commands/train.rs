use std::path::{Path, PathBuf};

use topostain_core::gan::{train, Dataset, TrainConfig};
use topostain_core::graph::AggregatorKind;
use topostain_core::image::RgbImage;
use topostain_core::losses::ContrastiveConfig;
use topostain_core::matching::{CmNorm, PageRankConfig};
use topostain_core::synth::pair_file_names;

use crate::config::RunConfig;
use crate::CliError;

pub fn train_config_from(cfg: &RunConfig) -> Result<TrainConfig, CliError> {
    let contrastive = ContrastiveConfig::new(
        cfg.f64_("tau")?,
        cfg.usize_("nodes_per_tap")?,
        vec![0, 4, 8, 12, 16],
        cfg.f64_list("thresholds")?,
        cfg.bool_("l2_normalize")?,
    )
    .map_err(|e| CliError::usage(e.to_string()))?;
    let aggregator = match cfg.str_("aggregator") {
        "sum" => AggregatorKind::PolynomialSum,
        "single" => AggregatorKind::SinglePower,
        other => {
            return Err(CliError::usage(format!(
                "aggregator must be `sum` or `single`, got `{other}`"
            )))
        }
    };
    let cm_norm = match cfg.str_("cm_norm") {
        "fro" => CmNorm::Frobenius,
        "l1" => CmNorm::L1,
        other => {
            return Err(CliError::usage(format!(
                "cm_norm must be `fro` or `l1`, got `{other}`"
            )))
        }
    };
    let pagerank = PageRankConfig::new(
        cfg.f64_("pagerank_damping")?,
        cfg.f64_("pagerank_tol")?,
        cfg.usize_("pagerank_max_iter")?,
    )
    .map_err(|e| CliError::usage(e.to_string()))?;

    let mut use_tacm = cfg.bool_("use_tacm")?;
    let mut use_tcpm = cfg.bool_("use_tcpm")?;
    let mut use_pert = cfg.bool_("use_pert")?;
    for part in cfg.str_("ablate").split(',').filter(|s| !s.is_empty()) {
        match part.trim() {
            "tacm" => use_tacm = false,
            "tcpm" => use_tcpm = false,
            "pert" => use_pert = false,
            other => {
                return Err(CliError::usage(format!(
                    "unknown ablation `{other}`; use tacm, tcpm or pert"
                )))
            }
        }
    }

    Ok(TrainConfig {
        epochs: cfg.usize_("epochs")?,
        batch_size: cfg.usize_("batch_size")?,
        learning_rate: cfg.f64_("lr")?,
        lambda1: cfg.f64_("lambda1")?,
        lambda2: cfg.f64_("lambda2")?,
        mask_ratio: cfg.f64_("mask_ratio")?,
        hops: cfg.usize_("hops")?,
        contrastive,
        seed: cfg.u64_("seed")?,
        ngf: cfg.usize_("ngf")?,
        ndf: cfg.usize_("ndf")?,
        adam_beta1: cfg.f64_("adam_beta1")?,
        adam_beta2: cfg.f64_("adam_beta2")?,
        pagerank,
        cm_norm,
        aggregator,
        use_tacm,
        use_tcpm,
        use_pert,
        ckpt_every: cfg.usize_("ckpt_every")?,
        sample_every: cfg.usize_("sample_every")?,
    })
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let train_cfg = train_config_from(cfg)?;
    let manifest = PathBuf::from(cfg.str_("data"));
    let dataset: Dataset<f64> =
        Dataset::load(&manifest).map_err(|e| CliError::from_core(e, 2))?;
    let out = PathBuf::from(cfg.str_("out"));

    println!("training on {} pairs from {}", dataset.len(), manifest.display());
    print!(
        "{}",
        cfg.echo(&[
            "seed",
            "epochs",
            "batch_size",
            "lr",
            "lambda1",
            "lambda2",
            "mask_ratio",
            "hops",
            "thresholds",
            "tau",
            "nodes_per_tap",
            "aggregator",
            "use_tacm",
            "use_tcpm",
            "use_pert",
            "ngf",
            "ndf",
        ])
    );

    let run = train(&dataset, &train_cfg, Some(&out)).map_err(|e| CliError::from_core(e, 3))?;

    write_translations(&run.state, &dataset, &manifest, &out.join("translated"))?;

    let last = run.rows.last().expect("training logged at least one step");
    println!(
        "done: {} steps, final total {:.6}; artifacts under {}",
        run.rows.len(),
        last.total,
        out.display()
    );
    Ok(())
}

/// Translate every dataset image with the final weights; file names mirror
/// the reference target names so `eval` can pair them directly.
fn write_translations(
    state: &topostain_core::gan::TrainState<f64>,
    dataset: &Dataset<f64>,
    manifest: &Path,
    dir: &Path,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    let rows = topostain_core::synth::read_manifest(manifest)
        .map_err(|e| CliError::from_core(e, 2))?;
    for (pair, row) in dataset.pairs.iter().zip(&rows) {
        let fake = state
            .generator
            .infer_translate(&state.gen_store, &pair.he, dataset.height, dataset.width)
            .map_err(|e| CliError::from_core(e, 2))?;
        let img = RgbImage::from_unit_tensor(&fake, dataset.height, dataset.width);
        let (_, ihc_name, _) = pair_file_names(row.index);
        img.save_png(&dir.join(ihc_name))
            .map_err(|e| CliError::from_core(e, 2))?;
    }
    Ok(())
}
