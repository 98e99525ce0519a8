//! Post-hoc out-of-distribution scoring and analysis of artefact-colour
//! detection bias.
//!
//! The crate is generic over the floating point type used for feature
//! math (see [`Scalar`]). Most callers want the `f64` aliases exported at
//! the crate root, e.g. [`FeatureSet64`] and [`SubspaceModel64`].
//!
//! Modules:
//!
//! - [`data`]: feature matrices, the binary dump format, manifests, pooling
//! - [`scorers`]: fitted post-hoc scoring functions (higher = more ID)
//! - [`metrics`]: AUROC, AURC, FPR@TPR, Spearman, Wilcoxon, confidence intervals
//! - [`subspace`]: PCA, per-component discriminability, nuisance projection
//! - [`counterfactual`]: mask-conditioned recolouring and synthetic artefacts
//! - [`synthbench`]: synthetic anisotropic latent benchmarks
//! - [`linalg`]: the small dense kernels the above rely on

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod counterfactual;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod scalar;
pub mod scorers;
pub mod subspace;
pub mod synthbench;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use data::{FeatureSet, HeadWeights, Manifest, RawActivationTensor};
pub use scorers::{FittedScorer, Method, ScoreVector, ScorerConfig};
pub use subspace::SubspaceModel;
pub use synthbench::{GorillaReport, SynthConfig, SynthFrame};

pub type FeatureSet64 = FeatureSet<f64>;
pub type FeatureSet32 = FeatureSet<f32>;
pub type HeadWeights64 = HeadWeights<f64>;
pub type HeadWeights32 = HeadWeights<f32>;
pub type RawActivationTensor64 = RawActivationTensor<f64>;
pub type RawActivationTensor32 = RawActivationTensor<f32>;
pub type FittedScorer64 = FittedScorer<f64>;
pub type FittedScorer32 = FittedScorer<f32>;
pub type ScoreVector64 = ScoreVector<f64>;
pub type ScoreVector32 = ScoreVector<f32>;
pub type SubspaceModel64 = SubspaceModel<f64>;
pub type SubspaceModel32 = SubspaceModel<f32>;
pub type SynthFrame64 = SynthFrame<f64>;
