//! Riemannian transfer CSP.
//!
//! Per-class EEG trial covariances of a source subject are aligned to a target
//! subject in the tangent space of the SPD manifold (top-two principal
//! components + Cholesky recoloring), then pooled with the target's own
//! covariances to compute common spatial patterns. Three multi-subject
//! strategies (single pooled filter, stacked features, ensemble) plus the
//! standard and composite CSP baselines are provided, together with the
//! experiment harness used to evaluate them.
//!
//! The numerical modules are generic over [`Real`] (`f32`/`f64`); the `*64`
//! aliases below name the `f64` instantiations used by the harness and CLI.

pub mod alignment;
pub mod classify;
pub mod cli;
pub mod csp;
pub mod data_io;
pub mod error;
mod matrix_json;
pub mod eval;
pub mod plot;
pub mod scalar;
pub mod signal;
pub mod spd_core;
pub mod transfer;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
pub use scalar::Real;

/// Class label as stored in label files.
pub type Label = i32;

pub type SpdMatrix64 = spd_core::SpdMatrix<f64>;
pub type SpdMatrix32 = spd_core::SpdMatrix<f32>;
pub type Trial64 = signal::Trial<f64>;
pub type Trial32 = signal::Trial<f32>;
pub type SpatialFilter64 = csp::SpatialFilter<f64>;
pub type AlignmentMap64 = alignment::AlignmentMap<f64>;
pub type LdaModel64 = classify::LdaModel<f64>;
pub type SubjectData64 = transfer::SubjectData<f64>;
pub type TransferModel64 = transfer::TransferModel<f64>;
