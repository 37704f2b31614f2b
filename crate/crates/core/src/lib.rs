//! topostain-core: topology-aware virtual-staining toolkit.
//!
//! The crate bundles the pieces needed to study topology-aware weakly-paired
//! image translation at desk scale: a dense reverse-mode tensor tape, patch
//! graphs with topology-adaptive aggregation, graph-contrastive and
//! correlation-matching losses, PageRank node importance, a toy GAN training
//! harness on synthetic weakly-paired stain images, and the full evaluation
//! metric suite (SSIM / PSNR / Fréchet / KID / stain deconvolution / ICC /
//! regression trends).
//!
//! All numeric kernels are generic over [`scalar::Scalar`] (f32 or f64); the
//! concrete aliases below pin the default f64 precision used by the CLI and
//! the acceptance tolerances.

// index-based loops are the house style for the dense numeric kernels
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod scalar;

pub mod matrix;
pub mod rng;
pub mod tensor;

pub mod graph;
pub mod losses;
pub mod matching;

pub mod gan;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod synth;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// Default scalar width; gradients are checked at 64-bit tolerances.
pub type Real = f64;

pub type Tensor = tensor::DiffTensor<Real>;
pub type TapeF64 = tensor::Tape<Real>;
pub type Mat = matrix::Matrix<Real>;
pub type Features = matrix::FeatureSet<Real>;

pub type Tensor32 = tensor::DiffTensor<f32>;
pub type Mat32 = matrix::Matrix<f32>;
