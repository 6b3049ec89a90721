//! Semantic feature discrimination for perceptual super-resolution.
//!
//! A frozen semantic encoder turns images into a three-level middle-feature
//! pyramid and a global embedding. The feature discriminator scores the
//! pyramid pixel-wise; a learnable prompt pair scores the global embedding by
//! relative cosine similarity. Both are trained adversarially against an
//! RRDB generator, and afterwards serve, unchanged, as a no-reference image
//! quality scorer.

pub mod archive;
pub mod correlation;
pub mod degrade;
pub mod encoders;
pub mod error;
pub mod feat_disc;
pub mod features;
pub mod generator;
pub mod image;
pub mod iqa;
pub mod metrics;
pub mod nn;
pub mod text_disc;
pub mod training;

pub use error::{Result, SfdError};
