//! Patch graphs: cosine-threshold adjacency, symmetric normalization, random
//! edge masking, and topology-adaptive n-hop aggregation.
//!
//! Graph construction is plain (non-differentiable) matrix work; aggregation
//! is recorded on a tape so gradients flow into the node features and the
//! per-hop weights.

use crate::error::{CoreError, Result};
use crate::matrix::{FeatureSet, Matrix};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::DiffTensor;

/// Node features plus a 0/1 symmetric adjacency with cached degrees.
#[derive(Debug, Clone)]
pub struct PatchGraph<T: Scalar> {
    pub features: FeatureSet<T>,
    pub adjacency: Matrix<T>,
    pub degree: Vec<usize>,
}

impl<T: Scalar> PatchGraph<T> {
    pub fn node_count(&self) -> usize {
        self.degree.len()
    }

    /// Count of 1-entries strictly above the diagonal.
    pub fn off_diagonal_edges(&self) -> usize {
        let n = self.node_count();
        let mut count = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency.get(i, j) != T::zero() {
                    count += 1;
                }
            }
        }
        count
    }
}

/// How n-hop aggregation combines powers of the normalized adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorKind {
    /// Σ_{k=0..n} Â^k F W_k with independent per-hop weights (default).
    PolynomialSum,
    /// Â^n F W with a single weight matrix (ablation variant).
    SinglePower,
}

/// Per-hop weight matrices for one aggregation layer.
#[derive(Debug, Clone)]
pub struct GraphConvParams<T: Scalar> {
    hops: usize,
    kind: AggregatorKind,
    weights: Vec<DiffTensor<T>>,
}

impl<T: Scalar> GraphConvParams<T> {
    /// Polynomial filter: requires exactly hops+1 weight matrices.
    pub fn polynomial(hops: usize, weights: Vec<DiffTensor<T>>) -> Result<Self> {
        if weights.len() != hops + 1 {
            return Err(CoreError::Shape {
                op: "graph_conv_params",
                detail: format!("{} hops need {} weights, got {}", hops, hops + 1, weights.len()),
            });
        }
        Ok(GraphConvParams {
            hops,
            kind: AggregatorKind::PolynomialSum,
            weights,
        })
    }

    /// Single-weight Â^n variant.
    pub fn single_power(hops: usize, weight: DiffTensor<T>) -> Self {
        GraphConvParams {
            hops,
            kind: AggregatorKind::SinglePower,
            weights: vec![weight],
        }
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn kind(&self) -> AggregatorKind {
        self.kind
    }

    pub fn weights(&self) -> &[DiffTensor<T>] {
        &self.weights
    }
}

/// Number of weight matrices an aggregation layer needs.
pub fn weight_count(kind: AggregatorKind, hops: usize) -> usize {
    match kind {
        AggregatorKind::PolynomialSum => hops + 1,
        AggregatorKind::SinglePower => 1,
    }
}

/// Random edge-mask settings for the perturbation branch.
#[derive(Debug, Clone, Copy)]
pub struct PerturbationConfig {
    pub mask_ratio: f64,
    pub seed: u64,
}

impl PerturbationConfig {
    pub fn new(mask_ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mask_ratio) {
            return Err(CoreError::Degenerate(format!(
                "mask ratio {mask_ratio} outside [0, 1]"
            )));
        }
        Ok(PerturbationConfig { mask_ratio, seed })
    }
}

/// `A[i][j] = 1` iff cos(f_i, f_j) ≥ th. The diagonal is always 1 (a node's
/// self-similarity is 1) so every degree is at least one.
pub fn build_adjacency<T: Scalar>(features: &FeatureSet<T>, th: f64) -> Result<PatchGraph<T>> {
    let n = features.rows();
    if n < 2 {
        return Err(CoreError::Degenerate(format!(
            "adjacency needs at least 2 nodes, got {n}"
        )));
    }
    let norms = features.row_l2_norms();
    for (i, &nm) in norms.iter().enumerate() {
        if nm == T::zero() {
            return Err(CoreError::Degenerate(format!(
                "feature row {i} has zero norm; cosine similarity undefined"
            )));
        }
    }
    let tht = T::from_f64(th);
    let mut adjacency = Matrix::zeros(n, n);
    for i in 0..n {
        adjacency.set(i, i, T::one());
        for j in (i + 1)..n {
            let mut dot = T::zero();
            let (ri, rj) = (features.row(i), features.row(j));
            for k in 0..features.cols() {
                dot = dot + ri[k] * rj[k];
            }
            let cos = dot / (norms[i] * norms[j]);
            if cos >= tht {
                adjacency.set(i, j, T::one());
                adjacency.set(j, i, T::one());
            }
        }
    }
    let degree = degrees(&adjacency);
    Ok(PatchGraph {
        features: features.clone(),
        adjacency,
        degree,
    })
}

fn degrees<T: Scalar>(adjacency: &Matrix<T>) -> Vec<usize> {
    (0..adjacency.rows())
        .map(|i| {
            adjacency
                .row(i)
                .iter()
                .filter(|&&v| v != T::zero())
                .count()
        })
        .collect()
}

/// Â = D^{-1/2} A D^{-1/2}.
pub fn normalize_adjacency<T: Scalar>(graph: &PatchGraph<T>) -> Result<Matrix<T>> {
    let n = graph.node_count();
    let mut inv_sqrt = Vec::with_capacity(n);
    for (i, &d) in graph.degree.iter().enumerate() {
        if d == 0 {
            return Err(CoreError::Degenerate(format!(
                "node {i} has zero degree; cannot normalize"
            )));
        }
        inv_sqrt.push(T::one() / T::from_usize(d).sqrt());
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let a = graph.adjacency.get(i, j);
            if a != T::zero() {
                out.set(i, j, a * inv_sqrt[i] * inv_sqrt[j]);
            }
        }
    }
    Ok(out)
}

/// Remove each off-diagonal edge independently with probability
/// `cfg.mask_ratio`, mirrored across the diagonal. Self-loops are never
/// removed. Distinct seeds produce the two perturbed graphs used by the
/// perturbation branch.
pub fn mask_edges<T: Scalar>(graph: &PatchGraph<T>, cfg: &PerturbationConfig) -> PatchGraph<T> {
    let n = graph.node_count();
    let mut rng = Rng::new(cfg.seed);
    let mut adjacency = graph.adjacency.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            if adjacency.get(i, j) != T::zero() && rng.unit_f64() < cfg.mask_ratio {
                adjacency.set(i, j, T::zero());
                adjacency.set(j, i, T::zero());
            }
        }
    }
    let degree = degrees(&adjacency);
    PatchGraph {
        features: graph.features.clone(),
        adjacency,
        degree,
    }
}

/// n-hop topology-adaptive aggregation over a normalized adjacency.
/// Differentiable w.r.t. the features and every weight matrix; the adjacency
/// enters as a constant.
pub fn tagcn_forward<T: Scalar>(
    adj_hat: &Matrix<T>,
    features: &DiffTensor<T>,
    params: &GraphConvParams<T>,
) -> Result<DiffTensor<T>> {
    let n = features.shape()[0];
    if adj_hat.rows() != n || adj_hat.cols() != n {
        return Err(CoreError::DimensionMismatch {
            op: "tagcn_forward",
            lhs: vec![adj_hat.rows(), adj_hat.cols()],
            rhs: features.shape().to_vec(),
        });
    }
    let d = features.shape()[1];
    for w in params.weights() {
        if w.shape() != [d, d] {
            return Err(CoreError::DimensionMismatch {
                op: "tagcn_forward",
                lhs: features.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
    }
    let tape = features.tape().clone();
    let adj = tape.constant_matrix(adj_hat)?;
    match params.kind() {
        AggregatorKind::PolynomialSum => {
            let mut propagated = features.clone();
            let mut out = features.matmul(&params.weights()[0])?;
            for k in 1..=params.hops() {
                propagated = adj.matmul(&propagated)?;
                let term = propagated.matmul(&params.weights()[k])?;
                out = out.add(&term)?;
            }
            Ok(out)
        }
        AggregatorKind::SinglePower => {
            let mut propagated = features.clone();
            for _ in 0..params.hops() {
                propagated = adj.matmul(&propagated)?;
            }
            propagated.matmul(&params.weights()[0])
        }
    }
}

/// Seeded variance-preserving uniform init for a D×D hop weight:
/// U(-b, b) with b = sqrt(6 / (D + D)).
pub fn init_hop_weight(d: usize, rng: &mut Rng) -> Vec<f64> {
    let bound = (6.0 / (d + d) as f64).sqrt();
    (0..d * d).map(|_| rng.uniform(-bound, bound)).collect()
}
