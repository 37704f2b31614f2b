//! Contrastive objectives: node-level InfoNCE, the topology-aware /
//! topology-perturbation pair and their average, and the multi-scale
//! PatchNCE baseline loss.

use crate::error::{CoreError, Result};
use crate::graph::{
    build_adjacency, mask_edges, normalize_adjacency, tagcn_forward, GraphConvParams,
    PerturbationConfig,
};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::tensor::DiffTensor;

/// Settings shared by every InfoNCE-style loss.
#[derive(Debug, Clone)]
pub struct ContrastiveConfig {
    /// Softmax temperature applied inside all logits.
    pub temperature: f64,
    /// Sampled locations per layer; each anchor contrasts against the other
    /// locations of the same image.
    pub negatives_per_anchor: usize,
    /// Encoder depths the losses tap.
    pub tap_layers: Vec<usize>,
    /// Per-tap cosine thresholds for adjacency construction.
    pub thresholds: Vec<f64>,
    /// L2-normalize node features before dot products.
    pub l2_normalize: bool,
}

impl ContrastiveConfig {
    pub fn new(
        temperature: f64,
        negatives_per_anchor: usize,
        tap_layers: Vec<usize>,
        thresholds: Vec<f64>,
        l2_normalize: bool,
    ) -> Result<Self> {
        if temperature <= 0.0 {
            return Err(CoreError::Degenerate(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if tap_layers.len() != thresholds.len() {
            return Err(CoreError::Degenerate(format!(
                "{} tap layers but {} thresholds",
                tap_layers.len(),
                thresholds.len()
            )));
        }
        Ok(ContrastiveConfig {
            temperature,
            negatives_per_anchor,
            tap_layers,
            thresholds,
            l2_normalize,
        })
    }

    /// τ = 0.07, 256 locations, taps at encoder layers [0, 4, 8, 12, 16],
    /// thresholds [0.5, 0.5, 0.1, 0.1, 0.1].
    pub fn reference_defaults() -> Self {
        ContrastiveConfig {
            temperature: 0.07,
            negatives_per_anchor: 256,
            tap_layers: vec![0, 4, 8, 12, 16],
            thresholds: vec![0.5, 0.5, 0.1, 0.1, 0.1],
            l2_normalize: true,
        }
    }
}

/// Row-wise L2 normalization (with a tiny floor so zero rows stay finite).
pub fn l2_normalize_rows<T: Scalar>(x: &DiffTensor<T>) -> Result<DiffTensor<T>> {
    let norms = x
        .mul(x)?
        .row_sum()?
        .add_scalar(T::from_f64(1e-12))?
        .sqrt()?;
    x.div(&norms)
}

/// InfoNCE over matched node sets: anchors are rows of `s`, the positive for
/// row i is row i of `g`, negatives are the other rows of `g`.
/// Returns the mean over rows i of -log softmax_j(s_i·g_j / τ) at j = i.
pub fn info_nce_nodes<T: Scalar>(
    s: &DiffTensor<T>,
    g: &DiffTensor<T>,
    tau: f64,
) -> Result<DiffTensor<T>> {
    if s.shape() != g.shape() || s.shape().len() != 2 {
        return Err(CoreError::DimensionMismatch {
            op: "info_nce_nodes",
            lhs: s.shape().to_vec(),
            rhs: g.shape().to_vec(),
        });
    }
    let n = s.shape()[0];
    if n < 2 {
        return Err(CoreError::Degenerate(
            "InfoNCE needs at least 2 nodes to form negatives".into(),
        ));
    }
    let logits = s
        .matmul(&g.t()?)?
        .scale(T::from_f64(1.0 / tau))?;
    let targets: Vec<usize> = (0..n).collect();
    logits.softmax_xent_rows(&targets)
}

/// The two TACM branches and their average.
#[derive(Debug, Clone)]
pub struct TacmBreakdown<T: Scalar> {
    pub awa: DiffTensor<T>,
    pub pert: Option<DiffTensor<T>>,
    pub struc: DiffTensor<T>,
}

/// Topology-aware consistency matching at one feature scale.
///
/// Branch 1 aggregates each feature set over its own cosine graph through the
/// shared `gnn1` and contrasts the results (alignment loss). Branch 2 draws
/// two independently masked copies of the source graph's adjacency, applies
/// them to the two feature sets through `gnn2`, and contrasts again
/// (perturbation loss). The structural loss is their average, or the
/// alignment loss alone when `with_pert` is false.
///
/// Adjacency is built from the current feature values and enters the tape as
/// a constant; gradients flow through the aggregation into both feature sets
/// and all hop weights.
#[allow(clippy::too_many_arguments)]
pub fn tacm_loss<T: Scalar>(
    f_he: &DiffTensor<T>,
    f_vihc: &DiffTensor<T>,
    gnn1: &GraphConvParams<T>,
    gnn2: &GraphConvParams<T>,
    threshold: f64,
    cfg: &ContrastiveConfig,
    pert: &PerturbationConfig,
    with_pert: bool,
) -> Result<TacmBreakdown<T>> {
    if f_he.shape() != f_vihc.shape() {
        return Err(CoreError::DimensionMismatch {
            op: "tacm_loss",
            lhs: f_he.shape().to_vec(),
            rhs: f_vihc.shape().to_vec(),
        });
    }
    let graph_he = build_adjacency(&f_he.to_matrix(), threshold)?;
    let graph_vihc = build_adjacency(&f_vihc.to_matrix(), threshold)?;

    let aggregate = |adj: &crate::matrix::Matrix<T>,
                     f: &DiffTensor<T>,
                     params: &GraphConvParams<T>|
     -> Result<DiffTensor<T>> {
        let out = tagcn_forward(adj, f, params)?;
        if cfg.l2_normalize {
            l2_normalize_rows(&out)
        } else {
            Ok(out)
        }
    };

    let s = aggregate(&normalize_adjacency(&graph_he)?, f_he, gnn1)?;
    let g = aggregate(&normalize_adjacency(&graph_vihc)?, f_vihc, gnn1)?;
    let awa = info_nce_nodes(&s, &g, cfg.temperature)?;

    if !with_pert {
        return Ok(TacmBreakdown {
            awa: awa.clone(),
            pert: None,
            struc: awa,
        });
    }

    // Both perturbed graphs reuse the source-image adjacency, each with its
    // own mask stream.
    let mask_he = PerturbationConfig {
        mask_ratio: pert.mask_ratio,
        seed: derive_seed(pert.seed, 0x68_65),
    };
    let mask_vihc = PerturbationConfig {
        mask_ratio: pert.mask_ratio,
        seed: derive_seed(pert.seed, 0x76_69),
    };
    let pert_he = mask_edges(&graph_he, &mask_he);
    let pert_vihc = mask_edges(&graph_he, &mask_vihc);

    let s_p = aggregate(&normalize_adjacency(&pert_he)?, f_he, gnn2)?;
    let g_p = aggregate(&normalize_adjacency(&pert_vihc)?, f_vihc, gnn2)?;
    let pert_loss = info_nce_nodes(&s_p, &g_p, cfg.temperature)?;

    let struc = awa.add(&pert_loss)?.scale(T::from_f64(0.5))?;
    Ok(TacmBreakdown {
        awa,
        pert: Some(pert_loss),
        struc,
    })
}

/// Multi-scale PatchNCE: for each tapped layer, anchors from the output
/// features contrast against the matched input features; the per-layer
/// InfoNCE values are averaged.
pub fn patch_nce<T: Scalar>(
    encoder_feats_in: &[DiffTensor<T>],
    encoder_feats_out: &[DiffTensor<T>],
    cfg: &ContrastiveConfig,
) -> Result<DiffTensor<T>> {
    if encoder_feats_in.len() != encoder_feats_out.len() || encoder_feats_in.is_empty() {
        return Err(CoreError::Degenerate(format!(
            "patch_nce needs matching non-empty layer lists, got {} and {}",
            encoder_feats_in.len(),
            encoder_feats_out.len()
        )));
    }
    let mut total: Option<DiffTensor<T>> = None;
    for (f_in, f_out) in encoder_feats_in.iter().zip(encoder_feats_out) {
        if f_in.shape().len() != 2 || f_in.shape()[0] < 2 {
            return Err(CoreError::Degenerate(
                "patch_nce layer needs at least 2 sampled locations".into(),
            ));
        }
        let (anchor, positive) = if cfg.l2_normalize {
            (l2_normalize_rows(f_out)?, l2_normalize_rows(f_in)?)
        } else {
            (f_out.clone(), f_in.clone())
        };
        let layer_loss = info_nce_nodes(&anchor, &positive, cfg.temperature)?;
        total = Some(match total {
            Some(t) => t.add(&layer_loss)?,
            None => layer_loss,
        });
    }
    total
        .unwrap()
        .scale(T::from_f64(1.0 / encoder_feats_in.len() as f64))
}
