//! Analysis core for comparing what convolutional networks have learned
//! through their weight covariances.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, reports and the
//! command-line driver live in the `spectra` crate.
//!
//! - [`spatial`]: channel-averaged spatial filter covariance and eigenbasis.
//! - [`factorization`]: frozen filter banks and joint/pointwise conversion.
//! - [`alignment`]: orthogonal Procrustes alignment of representations.
//! - [`covariance`]: shrinkage, effective rank, Bures-Wasserstein
//!   similarity and its normalized form.
//! - [`synth`]: spiked-model fixtures with planted ground truth.

#![cfg_attr(not(test), no_std)]
// `!(x > y)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod alignment;
pub mod covariance;
pub mod error;
pub mod factorization;
pub mod linalg;
pub mod rng;
pub mod spatial;
pub mod synth;

pub use alignment::{align_weights, procrustes_align, ActivationMatrix, AlignmentMap};
pub use covariance::{
    bw_cosine, channel_covariance, compare_covariances, effective_rank, eigvec_similarity_matrix,
    normalized_similarity, resample_covariance, shrink_covariance, shrink_eigenvalue, CompareOptions,
    Covariance, CovarianceKind, SimilarityBaseline, SimilarityReport,
};
pub use error::{Error, Result};
pub use factorization::{build_filter_bank, project_joint_to_channel, reconstruct_joint, ChannelWeight, FilterBank};
pub use linalg::{Matrix, Spectrum};
pub use spatial::{spatial_covariance, spatial_eigvectors, ConvWeight, SpatialSpectrum};
pub use synth::{layer_models, make_paired_fixture, sample_weights, FixtureMode, PairedFixture, SpikedModel};
