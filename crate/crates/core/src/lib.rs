//! Interpretable survival prognosis on frozen image features.
//!
//! A sigmoid risk head is trained on average-pooled feature maps with the Cox
//! partial likelihood. The trained head yields a risk-specific Grad-CAM,
//! which is split over 29 anatomical region boxes (completed by a small
//! masked-regression network when the detector misses some) into a ranked
//! per-region risk report. [`metrics`] covers evaluation and [`synth`]
//! generates cohorts with known ground truth.

pub mod error;
pub mod metrics;
pub mod region;
pub mod regional;
pub mod riskcam;
pub mod survival;
pub mod synth;

pub use error::{Error, Result};
