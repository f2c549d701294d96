//! Prototype-guided robust learning against backdoor-poisoned training data.
//!
//! The crate is organised around the stages of the defense:
//!
//! * [`nn`]: a small deterministic network `M = l ∘ s ∘ f` with manual backpropagation and Adam.
//! * [`data`]: synthetic datasets, the three poisoning attack families and augmentation.
//! * [`prototype`]: class prototypes, entropic optimal-transport pseudo-labeling and
//!   label-consistency verification.
//! * [`weighting`]: per-sample trust weights from feature-space distance to validation samples.
//! * [`train`]: the training loop with signed weighted cross entropy, its ablations and baselines.
//! * [`metrics`]: ACC/ASR/TPR/FPR, the loss-based AUC diagnostic and feature consistency.

pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod prototype;
pub mod rng;
pub mod train;
pub mod weighting;

pub use error::{Error, Result};
