//! Training-free data selection over per-image semantic patterns.
//!
//! The pipeline has three stages:
//!
//! 1. [`bundle`]: per-image features and attention maps, produced by a
//!    pretrained vision transformer, are read from a binary bundle file.
//! 2. [`extraction`]: each image is reduced to a handful of semantic patterns
//!    (attention filter, locality mask, spectral clustering, cluster means).
//! 3. [`selection`]: images are picked one at a time by sampling patterns with
//!    probability proportional to their squared distance to the nearest
//!    already-selected pattern, or by one of the baseline strategies.
//!
//! [`numkernels`] holds the small dense numerical primitives these stages
//! need, and [`synth`] generates planted-category test data.

pub mod bundle;
pub mod error;
pub mod extraction;
pub mod numkernels;
pub mod rng;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};
