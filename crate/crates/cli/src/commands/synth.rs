use std::path::PathBuf;

use topostain_core::synth::{generate_dataset, SynthConfig};

use crate::config::RunConfig;
use crate::CliError;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let synth_cfg = SynthConfig {
        size: cfg.usize_("size")?,
        structures: cfg.usize_("structures")?,
        jitter_translate: cfg.f64_("jitter_translate")?,
        jitter_rot_deg: cfg.f64_("jitter_rot_deg")?,
        positive_fraction: cfg.f64_("positive_fraction")?,
        seed: cfg.u64_("seed")?,
    };
    let count = cfg.u64_("count")?;
    let out = PathBuf::from(cfg.str_("out"));
    let manifest =
        generate_dataset(&synth_cfg, count, &out).map_err(|e| CliError::from_core(e, 2))?;
    println!("wrote {count} pairs under {}", out.display());
    println!("{}", manifest.display());
    Ok(())
}
