//! Learned keypoint detection with Generalized Hinging Hyperplanes.
//!
//! A detector is a piecewise-linear regressor over a six-channel feature image
//! (CIE L\*u\*v\* plus horizontal/vertical gradients and gradient magnitude).
//! Applied densely it yields a score map whose strict local maxima are the
//! keypoints. The crate covers the whole workflow:
//!
//! - [`imagekit`] – image decoding, color conversion, feature stacks and the
//!   convolution backends (direct, separable, circular/frequency domain).
//! - [`ghh`] – the regressor itself: patch scoring and dense score maps.
//! - [`trainset`] – training-set construction from a stack of co-registered
//!   images: candidate detection, cross-image consensus, patch sampling, PCA.
//! - [`learner`] – classification, shape and temporal loss terms, greedy
//!   hyperplane addition with trust-region Newton refinement, grid search.
//! - [`sepfilters`] – shared separable-filter approximation of a trained bank.
//! - [`detector`] – non-maximum suppression and keypoint budgeting.
//! - [`evalkit`] – repeatability metrics and sequence-level reports.
//! - [`modelio`] – the versioned model JSON document.
//! - [`synth`] – a seeded generator of synthetic illumination stacks.

pub mod detector;
pub mod error;
pub mod evalkit;
pub mod ghh;
pub mod imagekit;
pub mod learner;
pub mod modelio;
pub mod numeric;
pub mod sepfilters;
pub mod synth;
pub mod trainset;

pub use error::{Error, Result};

/// Version of the model JSON document.
pub const MODEL_SCHEMA_VERSION: u32 = 1;
/// Version of the binary training-set archive.
pub const TRAINSET_SCHEMA_VERSION: u32 = 1;
/// Version of the evaluation report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;
