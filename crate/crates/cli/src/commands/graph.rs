use std::collections::BTreeMap;
use std::path::Path;

use topostain_core::graph::build_adjacency;
use topostain_core::matching::{pagerank, transition_matrix, PageRankConfig};
use topostain_core::matrix::Matrix;
use topostain_core::metrics::read_tagf;

use crate::config::RunConfig;
use crate::CliError;

fn load_graph(cfg: &RunConfig) -> Result<topostain_core::graph::PatchGraph<f64>, CliError> {
    let path = cfg.str_("features");
    if path.is_empty() {
        return Err(CliError::usage(
            "graph subcommands need --features FILE.tagf",
        ));
    }
    let features: Matrix<f64> =
        read_tagf(Path::new(path)).map_err(|e| CliError::from_core(e, 2))?;
    build_adjacency(&features, cfg.f64_("threshold")?).map_err(|e| CliError::from_core(e, 4))
}

/// Adjacency as a 0/1 text grid plus a degree histogram CSV.
pub fn inspect(cfg: &RunConfig) -> Result<(), CliError> {
    let graph = load_graph(cfg)?;
    let n = graph.node_count();
    for i in 0..n {
        let line: String = (0..n)
            .map(|j| if graph.adjacency.get(i, j) != 0.0 { '1' } else { '0' })
            .collect();
        println!("{line}");
    }
    println!();
    println!("degree,count");
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for &d in &graph.degree {
        *histogram.entry(d).or_insert(0) += 1;
    }
    for (degree, count) in histogram {
        println!("{degree},{count}");
    }
    Ok(())
}

/// Per-node PageRank importance scores as CSV.
pub fn importance(cfg: &RunConfig) -> Result<(), CliError> {
    let graph = load_graph(cfg)?;
    let pr_cfg = PageRankConfig::new(
        cfg.f64_("pagerank_damping")?,
        cfg.f64_("pagerank_tol")?,
        cfg.usize_("pagerank_max_iter")?,
    )
    .map_err(|e| CliError::usage(e.to_string()))?;
    let transition = transition_matrix(&graph).map_err(|e| CliError::from_core(e, 4))?;
    let scores = pagerank(&transition, &pr_cfg).map_err(|e| CliError::from_core(e, 4))?;
    println!("node,score");
    for (i, s) in scores.as_slice().iter().enumerate() {
        println!("{i},{s}");
    }
    Ok(())
}
