//! Pathology matching: damped PageRank node importance, importance-weighted
//! feature enhancement, and the correlation (Gram) matching loss between
//! generated and real target-stain features.

use crate::error::{CoreError, Result};
use crate::graph::{build_adjacency, PatchGraph};
use crate::matrix::{FeatureSet, Matrix};
use crate::scalar::Scalar;
use crate::tensor::DiffTensor;

/// Stationary importance distribution of a damped random walk.
#[derive(Debug, Clone)]
pub struct ImportanceScores<T: Scalar> {
    values: Vec<T>,
}

impl<T: Scalar> ImportanceScores<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Check the simplex and damping-floor invariants.
    pub fn validate(&self, damping: f64) -> Result<()> {
        let sum: f64 = self.values.iter().map(|v| v.as_f64()).sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(CoreError::Degenerate(format!(
                "importance scores sum to {sum}, expected 1"
            )));
        }
        let floor = (1.0 - damping) / self.values.len() as f64 - 1e-12;
        for (i, v) in self.values.iter().enumerate() {
            if v.as_f64() < floor {
                return Err(CoreError::Degenerate(format!(
                    "score {i} = {v} below damping floor {floor}"
                )));
            }
        }
        Ok(())
    }
}

/// Damped power-iteration settings. Defaults: α = 0.85, ε = 1e-6, 100
/// iterations.
#[derive(Debug, Clone, Copy)]
pub struct PageRankConfig {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        PageRankConfig {
            damping: 0.85,
            tolerance: 1e-6,
            max_iterations: 100,
        }
    }
}

impl PageRankConfig {
    pub fn new(damping: f64, tolerance: f64, max_iterations: usize) -> Result<Self> {
        if !(0.0 < damping && damping < 1.0) {
            return Err(CoreError::Degenerate(format!(
                "damping {damping} outside (0, 1)"
            )));
        }
        if tolerance <= 0.0 {
            return Err(CoreError::Degenerate(format!(
                "tolerance {tolerance} must be positive"
            )));
        }
        Ok(PageRankConfig {
            damping,
            tolerance,
            max_iterations,
        })
    }
}

/// Symmetric positive-semidefinite Gram matrix of feature rows.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix<T: Scalar> {
    matrix: Matrix<T>,
}

impl<T: Scalar> CorrelationMatrix<T> {
    pub fn gram(features: &FeatureSet<T>) -> Result<Self> {
        Ok(CorrelationMatrix {
            matrix: features.matmul_nt(features)?,
        })
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }
}

/// Norm used by the correlation matching loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmNorm {
    /// Frobenius norm of the Gram difference, divided by N².
    Frobenius,
    /// Entrywise L1 norm, divided by N².
    L1,
}

/// Row-stochastic transition matrix P = D⁻¹A.
pub fn transition_matrix<T: Scalar>(graph: &PatchGraph<T>) -> Result<Matrix<T>> {
    let n = graph.node_count();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let d = graph.degree[i];
        if d == 0 {
            return Err(CoreError::Degenerate(format!(
                "node {i} has zero degree; transition row undefined"
            )));
        }
        let inv = T::one() / T::from_usize(d);
        for j in 0..n {
            if graph.adjacency.get(i, j) != T::zero() {
                out.set(i, j, inv);
            }
        }
    }
    Ok(out)
}

/// Damped PageRank by power iteration:
/// p ← α Pᵀ p + (1-α)/N · 1, starting from the uniform distribution.
///
/// The tolerance detects convergence (an update smaller than ε); the
/// iteration then keeps refining until the update reaches the numerical
/// floor or the iteration cap, since extra sweeps are free at these graph
/// sizes and leave the scores in agreement with the dense solve to near
/// machine precision.
pub fn pagerank<T: Scalar>(
    transition: &Matrix<T>,
    cfg: &PageRankConfig,
) -> Result<ImportanceScores<T>> {
    let n = transition.rows();
    if n == 0 || transition.cols() != n {
        return Err(CoreError::Shape {
            op: "pagerank",
            detail: format!("square transition required, got {:?}", transition.shape()),
        });
    }
    for i in 0..n {
        let sum: f64 = transition.row(i).iter().map(|v| v.as_f64()).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(CoreError::Degenerate(format!(
                "transition row {i} sums to {sum}, not row-stochastic"
            )));
        }
    }
    let alpha = T::from_f64(cfg.damping);
    let jump = T::from_f64((1.0 - cfg.damping) / n as f64);
    let tol = T::from_f64(cfg.tolerance);

    let numerical_floor = T::epsilon() * T::from_f64(64.0);
    let mut p = vec![T::one() / T::from_usize(n); n];
    let mut next = vec![T::zero(); n];
    let mut residual = T::infinity();
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        // next = α Pᵀ p + jump
        for v in next.iter_mut() {
            *v = jump;
        }
        for i in 0..n {
            let pi = p[i];
            if pi == T::zero() {
                continue;
            }
            let row = transition.row(i);
            for (j, &t) in row.iter().enumerate() {
                if t != T::zero() {
                    next[j] = next[j] + alpha * t * pi;
                }
            }
        }
        residual = p
            .iter()
            .zip(&next)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max);
        std::mem::swap(&mut p, &mut next);
        if residual < tol {
            converged = true;
            if residual <= numerical_floor {
                break;
            }
        }
    }
    if converged {
        return Ok(ImportanceScores { values: p });
    }
    Err(CoreError::Convergence {
        iterations: cfg.max_iterations,
        residual: residual.as_f64(),
    })
}

/// Importance-weighted residual enhancement: row i of the output is
/// `F[i] · (1 + p[i])`. The scores enter as constants; gradients flow only
/// through the features.
pub fn enhance_features<T: Scalar>(
    features: &DiffTensor<T>,
    scores: &ImportanceScores<T>,
) -> Result<DiffTensor<T>> {
    if features.shape().len() != 2 || features.shape()[0] != scores.len() {
        return Err(CoreError::DimensionMismatch {
            op: "enhance_features",
            lhs: features.shape().to_vec(),
            rhs: vec![scores.len()],
        });
    }
    let one_plus: Vec<T> = scores.as_slice().iter().map(|&p| T::one() + p).collect();
    let factor = features
        .tape()
        .constant(one_plus, vec![scores.len()])?;
    features.mul(&factor)
}

/// Plain-matrix variant of [`enhance_features`].
pub fn enhance_features_plain<T: Scalar>(
    features: &FeatureSet<T>,
    scores: &ImportanceScores<T>,
) -> Result<FeatureSet<T>> {
    if features.rows() != scores.len() {
        return Err(CoreError::DimensionMismatch {
            op: "enhance_features",
            lhs: vec![features.rows(), features.cols()],
            rhs: vec![scores.len()],
        });
    }
    let mut out = features.clone();
    for (i, &p) in scores.as_slice().iter().enumerate() {
        let f = T::one() + p;
        for v in out.row_mut(i) {
            *v = *v * f;
        }
    }
    Ok(out)
}

/// Correlation matching loss between generated and real target-stain
/// features at one scale.
///
/// Both feature sets are graphed, PageRank-scored and enhanced; the loss is
/// the normalized norm of the difference of their Gram matrices. The real
/// branch enters as a constant (no gradients flow into it); only
/// `features_generated` is differentiated.
pub fn correlation_matching_loss<T: Scalar>(
    features_generated: &DiffTensor<T>,
    features_real: &FeatureSet<T>,
    threshold: f64,
    pr_cfg: &PageRankConfig,
    norm: CmNorm,
) -> Result<DiffTensor<T>> {
    let gen_values = features_generated.to_matrix();
    if gen_values.shape() != features_real.shape() {
        return Err(CoreError::DimensionMismatch {
            op: "correlation_matching_loss",
            lhs: features_generated.shape().to_vec(),
            rhs: vec![features_real.rows(), features_real.cols()],
        });
    }
    let n = features_real.rows();

    let graph_gen = build_adjacency(&gen_values, threshold)?;
    let graph_real = build_adjacency(features_real, threshold)?;
    let p_gen = pagerank(&transition_matrix(&graph_gen)?, pr_cfg)?;
    let p_real = pagerank(&transition_matrix(&graph_real)?, pr_cfg)?;

    let tape = features_generated.tape().clone();
    let enhanced_gen = enhance_features(features_generated, &p_gen)?;
    // The real branch goes through the same recorded kernels (so that equal
    // inputs produce bit-equal Gram matrices) but from a constant leaf.
    let real_const = tape.constant_matrix(features_real)?;
    let enhanced_real = enhance_features(&real_const, &p_real)?;

    let gram_gen = enhanced_gen.matmul(&enhanced_gen.t()?)?;
    let gram_real = enhanced_real.matmul(&enhanced_real.t()?)?;
    let diff = gram_gen.sub(&gram_real)?;
    let scale = T::from_f64(1.0 / (n as f64 * n as f64));
    match norm {
        CmNorm::Frobenius => diff.mul(&diff)?.sum_all()?.sqrt()?.scale(scale),
        CmNorm::L1 => {
            let abs = diff.relu()?.add(&diff.neg()?.relu()?)?;
            abs.sum_all()?.scale(scale)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::check::finite_difference_check;
    use crate::tensor::Tape;

    fn graph_from(rows: &[Vec<f64>], th: f64) -> PatchGraph<f64> {
        build_adjacency(&Matrix::from_rows(rows), th).unwrap()
    }

    #[test]
    fn transition_identity_adjacency() {
        let g = graph_from(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0.5);
        let p = transition_matrix(&g).unwrap();
        assert_eq!(p, Matrix::identity(2));
    }

    #[test]
    fn transition_complete_graph_quarter() {
        let g = graph_from(&[vec![1.0], vec![1.0], vec![1.0], vec![1.0]], 0.5);
        let p = transition_matrix(&g).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(p.get(i, j), 0.25);
            }
        }
    }

    #[test]
    fn transition_path_graph_rows_stochastic() {
        let g = graph_from(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]], 0.5);
        let p = transition_matrix(&g).unwrap();
        assert_eq!(p.get(0, 1), 0.5);
        for i in 0..3 {
            let sum: f64 = p.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn pagerank_uniform_on_complete_graph() {
        let g = graph_from(&[vec![1.0], vec![1.0], vec![1.0], vec![1.0]], 0.5);
        let p = transition_matrix(&g).unwrap();
        let scores = pagerank(&p, &PageRankConfig::default()).unwrap();
        for &v in scores.as_slice() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        scores.validate(0.85).unwrap();
    }

    #[test]
    fn pagerank_two_disconnected_self_loops() {
        let g = graph_from(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0.5);
        let p = transition_matrix(&g).unwrap();
        let scores = pagerank(&p, &PageRankConfig::default()).unwrap();
        assert!((scores.as_slice()[0] - 0.5).abs() < 1e-12);
        assert!((scores.as_slice()[1] - 0.5).abs() < 1e-12);
    }

    /// Dense Gaussian-elimination solve of (I - αPᵀ) p = (1-α)/N · 1.
    fn pagerank_solve_oracle(p: &Matrix<f64>, alpha: f64) -> Vec<f64> {
        let n = p.rows();
        let mut a = vec![vec![0.0f64; n + 1]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (if i == j { 1.0 } else { 0.0 }) - alpha * p.get(j, i);
            }
            a[i][n] = (1.0 - alpha) / n as f64;
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            let pv = a[col][col];
            for j in col..=n {
                a[col][j] /= pv;
            }
            for row in 0..n {
                if row != col && a[row][col] != 0.0 {
                    let f = a[row][col];
                    for j in col..=n {
                        a[row][j] -= f * a[col][j];
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n]).collect()
    }

    #[test]
    fn pagerank_matches_linear_solve_oracle() {
        let mut rng = Rng::new(61);
        for trial in 0..10 {
            let n = 20;
            let f = Matrix::from_fn(n, 4, |_, _| rng.normal());
            let g = build_adjacency(&f, 0.1).unwrap();
            let p = transition_matrix(&g).unwrap();
            let cfg = PageRankConfig::new(0.85, 1e-12, 2000).unwrap();
            let scores = pagerank(&p, &cfg).unwrap();
            let oracle = pagerank_solve_oracle(&p, 0.85);
            for i in 0..n {
                assert!(
                    (scores.as_slice()[i] - oracle[i]).abs() < 1e-8,
                    "trial {trial}, node {i}"
                );
            }
            scores.validate(0.85).unwrap();
        }
    }

    #[test]
    fn pagerank_nonconvergence_carries_residual() {
        let g = graph_from(&[vec![1.0, 0.1], vec![0.1, 1.0], vec![-1.0, 0.6]], 0.1);
        let p = transition_matrix(&g).unwrap();
        let cfg = PageRankConfig::new(0.85, 1e-15, 1).unwrap();
        match pagerank(&p, &cfg) {
            Err(CoreError::Convergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn pagerank_invariant_under_relabeling() {
        let mut rng = Rng::new(8);
        let n = 12;
        let f = Matrix::from_fn(n, 3, |_, _| rng.normal());
        let g = build_adjacency(&f, 0.2).unwrap();
        let p = transition_matrix(&g).unwrap();
        let base = pagerank(&p, &PageRankConfig::default()).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let permuted = Matrix::from_fn(n, n, |i, j| p.get(perm[i], perm[j]));
        let scores = pagerank(&permuted, &PageRankConfig::default()).unwrap();
        for i in 0..n {
            assert!((scores.as_slice()[i] - base.as_slice()[perm[i]]).abs() < 1e-10);
        }
    }

    #[test]
    fn enhance_zero_scores_is_identity() {
        let tape = Tape::new();
        let f = tape
            .leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2], false)
            .unwrap();
        let zero = ImportanceScores {
            values: vec![0.0, 0.0],
        };
        let out = enhance_features(&f, &zero).unwrap();
        assert_eq!(out.values(), f.values());
    }

    #[test]
    fn enhance_uniform_scores_scale_uniformly() {
        let tape = Tape::new();
        let f = tape
            .leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2], false)
            .unwrap();
        let uniform = ImportanceScores {
            values: vec![0.5, 0.5],
        };
        let out = enhance_features(&f, &uniform).unwrap();
        assert_eq!(out.values(), vec![1.5, 3.0, 4.5, 6.0]);
    }

    #[test]
    fn enhance_hand_arithmetic() {
        let tape = Tape::new();
        let f = tape
            .leaf(vec![2.0, 0.0, 0.0, 4.0], vec![2, 2], false)
            .unwrap();
        let p = ImportanceScores {
            values: vec![0.7, 0.3],
        };
        let out = enhance_features(&f, &p).unwrap();
        assert_eq!(out.values(), vec![3.4, 0.0, 0.0, 5.2]);
    }

    #[test]
    fn enhance_length_mismatch_errors() {
        let tape = Tape::new();
        let f = tape.leaf(vec![1.0; 6], vec![3, 2], false).unwrap();
        let p = ImportanceScores {
            values: vec![0.5, 0.5],
        };
        assert!(enhance_features(&f, &p).is_err());
    }

    #[test]
    fn enhance_preserves_row_direction() {
        let mut rng = Rng::new(2);
        let f = Matrix::from_fn(5, 3, |_, _| rng.normal());
        let p = ImportanceScores {
            values: (0..5).map(|_| rng.unit_f64()).collect(),
        };
        let out = enhance_features_plain(&f, &p).unwrap();
        for i in 0..5 {
            let factor = 1.0 + p.as_slice()[i];
            assert!(factor > 0.0);
            for j in 0..3 {
                assert!((out.get(i, j) - factor * f.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cm_loss_zero_for_equal_features() {
        let mut rng = Rng::new(10);
        let f = Matrix::from_fn(6, 4, |_, _| rng.normal());
        let tape = Tape::new();
        let ft = tape
            .leaf(f.data().to_vec(), vec![6, 4], false)
            .unwrap();
        for norm in [CmNorm::Frobenius, CmNorm::L1] {
            let loss =
                correlation_matching_loss(&ft, &f, 0.1, &PageRankConfig::default(), norm).unwrap();
            assert_eq!(loss.value_scalar(), 0.0, "{norm:?}");
        }
    }

    #[test]
    fn cm_loss_gradient_matches_finite_differences() {
        let mut rng = Rng::new(29);
        let n = 5;
        let d = 3;
        let real = Matrix::from_fn(n, d, |_, _| rng.normal());
        let gen: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        let realc = real.clone();
        let out = finite_difference_check(
            move |_t, xt| {
                correlation_matching_loss(
                    xt,
                    &realc,
                    0.0,
                    &PageRankConfig::default(),
                    CmNorm::Frobenius,
                )
            },
            &gen,
            &[n, d],
            1e-6,
        )
        .unwrap();
        assert!(out.max_rel_err < 1e-4, "{:?}", out);
    }

    #[test]
    fn cm_loss_doubling_matches_brute_force() {
        let mut rng = Rng::new(55);
        let n = 4;
        let d = 3;
        let real = Matrix::from_fn(n, d, |_, _| rng.normal());
        let gen = Matrix::from_fn(n, d, |_, _| rng.normal());
        let pr = PageRankConfig::default();

        // brute-force oracle entirely on plain matrices
        let oracle = |gm: &Matrix<f64>| -> f64 {
            let gg = build_adjacency(gm, 0.0).unwrap();
            let gr = build_adjacency(&real, 0.0).unwrap();
            let pg = pagerank(&transition_matrix(&gg).unwrap(), &pr).unwrap();
            let prl = pagerank(&transition_matrix(&gr).unwrap(), &pr).unwrap();
            let eg = enhance_features_plain(gm, &pg).unwrap();
            let er = enhance_features_plain(&real, &prl).unwrap();
            let cg = eg.matmul_nt(&eg).unwrap();
            let cr = er.matmul_nt(&er).unwrap();
            cg.sub(&cr).unwrap().frobenius_norm() / (n * n) as f64
        };

        let eval = |gm: &Matrix<f64>| -> f64 {
            let tape = Tape::new();
            let gt = tape
                .leaf(gm.data().to_vec(), vec![n, d], false)
                .unwrap();
            correlation_matching_loss(&gt, &real, 0.0, &pr, CmNorm::Frobenius)
                .unwrap()
                .value_scalar()
        };

        let doubled = gen.scale(2.0);
        // cosine graph is scale-free, so the gen-side Gram scales by 4
        let tape = Tape::new();
        let gt = tape
            .leaf(gen.data().to_vec(), vec![n, d], false)
            .unwrap();
        let g_gen = build_adjacency(&gen.widen(), 0.0).unwrap();
        let g_dbl = build_adjacency(&doubled.widen(), 0.0).unwrap();
        assert_eq!(g_gen.adjacency, g_dbl.adjacency);
        let p_gen = pagerank(&transition_matrix(&g_gen).unwrap(), &pr).unwrap();
        let e1 = enhance_features(&gt, &p_gen).unwrap().to_matrix();
        let c1 = e1.matmul_nt(&e1).unwrap();
        let e2 = enhance_features_plain(&doubled, &p_gen).unwrap();
        let c2 = e2.matmul_nt(&e2).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((c2.get(i, j) - 4.0 * c1.get(i, j)).abs() < 1e-10);
            }
        }

        assert!((eval(&gen) - oracle(&gen)).abs() < 1e-10);
        assert!((eval(&doubled) - oracle(&doubled)).abs() < 1e-10);
    }

    #[test]
    fn cm_loss_nonnegative() {
        let mut rng = Rng::new(71);
        for _ in 0..10 {
            let real = Matrix::from_fn(4, 3, |_, _| rng.normal());
            let gen = Matrix::from_fn(4, 3, |_, _| rng.normal());
            let tape = Tape::new();
            let gt = tape
                .leaf(gen.data().to_vec(), vec![4, 3], false)
                .unwrap();
            for norm in [CmNorm::Frobenius, CmNorm::L1] {
                let loss =
                    correlation_matching_loss(&gt, &real, 0.0, &PageRankConfig::default(), norm)
                        .unwrap();
                assert!(loss.value_scalar() >= 0.0);
            }
        }
    }

    #[test]
    fn gram_is_symmetric_psd() {
        let mut rng = Rng::new(5);
        let f = Matrix::from_fn(6, 3, |_, _| rng.normal());
        let c = CorrelationMatrix::gram(&f).unwrap();
        assert!(c.matrix().is_symmetric(1e-12));
        // PSD: xᵀCx = ||Fᵀx||² ≥ 0 for random probes
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let mut quad = 0.0;
            for i in 0..6 {
                for j in 0..6 {
                    quad += x[i] * c.matrix().get(i, j) * x[j];
                }
            }
            assert!(quad >= -1e-10);
        }
    }
}
