//! Flat key-value run configuration: declared keys with defaults, merged
//! from (in rising precedence) defaults, a `key = value` config file,
//! command-line `--key value` flags, and the TOPOSTAIN_SEED environment
//! variable for the seed. Every consumed key is declared; unknown keys are
//! a startup error. Provenance is tracked per key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const KEYS: &[KeySpec] = &[
    KeySpec { name: "seed", default: "7", help: "master RNG seed (TOPOSTAIN_SEED overrides)" },
    KeySpec { name: "out", default: "out", help: "output directory" },
    // synth
    KeySpec { name: "size", default: "64", help: "synthetic image edge length (multiple of 4)" },
    KeySpec { name: "count", default: "200", help: "number of synthetic pairs" },
    KeySpec { name: "structures", default: "6", help: "gland structures per image" },
    KeySpec { name: "jitter_translate", default: "3", help: "max |translation| of the target image, px" },
    KeySpec { name: "jitter_rot_deg", default: "6", help: "max |rotation| of the target image, degrees" },
    KeySpec { name: "positive_fraction", default: "0.4", help: "share of structure area rendered positive" },
    // train
    KeySpec { name: "data", default: "out/manifest.csv", help: "dataset manifest path" },
    KeySpec { name: "epochs", default: "30", help: "training epochs" },
    KeySpec { name: "batch_size", default: "1", help: "images per optimizer step" },
    KeySpec { name: "lr", default: "0.0002", help: "initial learning rate (linear decay to 0 over the final half)" },
    KeySpec { name: "lambda1", default: "0.1", help: "structural-consistency weight" },
    KeySpec { name: "lambda2", default: "1", help: "correlation-matching weight" },
    KeySpec { name: "mask_ratio", default: "0.15", help: "edge mask ratio of the perturbation branch" },
    KeySpec { name: "hops", default: "4", help: "aggregation hops" },
    KeySpec { name: "thresholds", default: "0.5,0.5,0.1,0.1,0.1", help: "per-tap cosine thresholds" },
    KeySpec { name: "tau", default: "0.07", help: "contrastive temperature" },
    KeySpec { name: "nodes_per_tap", default: "64", help: "sampled node locations per tap (reference setting 256)" },
    KeySpec { name: "l2_normalize", default: "true", help: "L2-normalize node features inside contrastive losses" },
    KeySpec { name: "aggregator", default: "sum", help: "hop aggregation: sum (per-hop weights) | single (Â^n with one weight)" },
    KeySpec { name: "use_tacm", default: "true", help: "enable the structural-consistency loss" },
    KeySpec { name: "use_tcpm", default: "true", help: "enable the correlation-matching loss" },
    KeySpec { name: "use_pert", default: "true", help: "enable the perturbation branch inside TACM" },
    KeySpec { name: "ablate", default: "", help: "comma list of parts to disable: tacm,tcpm,pert" },
    KeySpec { name: "ngf", default: "8", help: "generator base width" },
    KeySpec { name: "ndf", default: "8", help: "discriminator base width" },
    KeySpec { name: "adam_beta1", default: "0.5", help: "Adam β1" },
    KeySpec { name: "adam_beta2", default: "0.999", help: "Adam β2" },
    KeySpec { name: "pagerank_damping", default: "0.85", help: "PageRank damping factor α" },
    KeySpec { name: "pagerank_tol", default: "1e-6", help: "PageRank convergence tolerance" },
    KeySpec { name: "pagerank_max_iter", default: "100", help: "PageRank iteration cap" },
    KeySpec { name: "cm_norm", default: "fro", help: "correlation-matching norm: fro | l1" },
    KeySpec { name: "ckpt_every", default: "10", help: "checkpoint cadence in epochs" },
    KeySpec { name: "sample_every", default: "10", help: "sample-grid cadence in epochs" },
    // eval
    KeySpec { name: "generated", default: "", help: "directory of generated images" },
    KeySpec { name: "reference", default: "", help: "directory of reference images" },
    KeySpec { name: "masks", default: "", help: "directory of ground-truth masks (pathology mode reference ratios)" },
    KeySpec { name: "features_real", default: "", help: "TAGF feature file for the reference set (else toy encoder)" },
    KeySpec { name: "features_generated", default: "", help: "TAGF feature file for the generated set (else toy encoder)" },
    KeySpec { name: "pathology", default: "false", help: "also compute positive-area ratios, ICC and trend" },
    KeySpec { name: "dab_threshold", default: "0.15", help: "DAB positivity threshold (concentration units)" },
    KeySpec { name: "dab_otsu", default: "false", help: "derive the DAB threshold per image via Otsu" },
    KeySpec { name: "ssim_window", default: "gaussian", help: "SSIM window: gaussian | global" },
    KeySpec { name: "eval_feature_seed", default: "17", help: "seed of the frozen toy feature extractor" },
    KeySpec { name: "eval_ngf", default: "8", help: "width of the frozen toy feature extractor" },
    KeySpec { name: "icc_variant", default: "icc2_1", help: "ICC variant: icc2_1 | icc3_1" },
    KeySpec { name: "kid_degree", default: "3", help: "polynomial kernel degree for KID" },
    // gradcheck
    KeySpec { name: "only", default: "", help: "run only gradcheck entries containing this substring" },
    // graph
    KeySpec { name: "features", default: "", help: "TAGF feature file for graph subcommands" },
    KeySpec { name: "threshold", default: "0.5", help: "cosine threshold for graph subcommands" },
];

fn spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
    provenance: BTreeMap<&'static str, &'static str>,
}

impl RunConfig {
    /// Merge defaults ← config file ← flags; TOPOSTAIN_SEED then overrides
    /// the seed unconditionally.
    pub fn build(flags: &[(String, String)], config_file: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = RunConfig {
            values: BTreeMap::new(),
            provenance: BTreeMap::new(),
        };
        for k in KEYS {
            cfg.values.insert(k.name, k.default.to_string());
            cfg.provenance.insert(k.name, "default");
        }
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
            for (ln, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(CliError::usage(format!(
                        "{}:{}: expected `key = value`, got `{raw}`",
                        path.display(),
                        ln + 1
                    )));
                };
                cfg.assign(key.trim(), value.trim(), "file")?;
            }
        }
        for (key, value) in flags {
            cfg.assign(key, value, "flag")?;
        }
        if let Ok(seed) = std::env::var("TOPOSTAIN_SEED") {
            cfg.assign("seed", seed.trim(), "env")?;
        }
        Ok(cfg)
    }

    fn assign(&mut self, key: &str, value: &str, source: &'static str) -> Result<(), CliError> {
        let Some(k) = spec(key) else {
            return Err(CliError::usage(format!(
                "unknown configuration key `{key}` (see --help for the declared keys)"
            )));
        };
        self.values.insert(k.name, value.to_string());
        self.provenance.insert(k.name, source);
        Ok(())
    }

    pub fn str_(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn provenance(&self, key: &str) -> &'static str {
        self.provenance.get(key).copied().unwrap_or("default")
    }

    pub fn usize_(&self, key: &str) -> Result<usize, CliError> {
        self.str_(key)
            .parse()
            .map_err(|e| CliError::usage(format!("key `{key}`: {e}")))
    }

    pub fn u64_(&self, key: &str) -> Result<u64, CliError> {
        self.str_(key)
            .parse()
            .map_err(|e| CliError::usage(format!("key `{key}`: {e}")))
    }

    pub fn f64_(&self, key: &str) -> Result<f64, CliError> {
        self.str_(key)
            .parse()
            .map_err(|e| CliError::usage(format!("key `{key}`: {e}")))
    }

    pub fn bool_(&self, key: &str) -> Result<bool, CliError> {
        match self.str_(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::usage(format!(
                "key `{key}`: expected a boolean, got `{other}`"
            ))),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.str_(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| CliError::usage(format!("key `{key}`: {e}")))
            })
            .collect()
    }

    /// Canonical `key = value` rendering of every declared key (hash input).
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Human-readable echo of selected keys with provenance.
    pub fn echo(&self, keys: &[&str]) -> String {
        let mut out = String::new();
        for key in keys {
            let _ = writeln!(
                out,
                "  {key} = {}  ({})",
                self.str_(key),
                self.provenance(key)
            );
        }
        out
    }
}

pub fn render_help() -> String {
    let mut out = String::new();
    out.push_str("topostain — topology-aware virtual-staining toolkit\n\n");
    out.push_str("USAGE: topostain <COMMAND> [--config FILE] [--KEY VALUE]...\n\n");
    out.push_str("COMMANDS:\n");
    out.push_str("  synth             generate a synthetic weakly-paired dataset\n");
    out.push_str("  train             train the translator on a dataset manifest\n");
    out.push_str("  eval              image-quality and pathology metrics over image dirs\n");
    out.push_str("  gradcheck         finite-difference audit of every loss (exit 5 on failure)\n");
    out.push_str("  graph inspect     dump a cosine graph as a 0/1 grid + degree histogram CSV\n");
    out.push_str("  graph importance  per-node PageRank scores as CSV\n\n");
    out.push_str("EXIT CODES: 0 ok, 2 I/O or startup, 3 training divergence,\n");
    out.push_str("            4 metric precondition, 5 gradcheck failure\n\n");
    out.push_str("KEYS (defaults shown; set via config file line `key = value` or flag --key value):\n");
    for k in KEYS {
        let _ = writeln!(out, "  --{:<18} {:<22} {}", k.name, format!("[{}]", k.default), k.help);
    }
    out.push_str("\nENVIRONMENT: TOPOSTAIN_SEED overrides the seed key.\n");
    out
}
