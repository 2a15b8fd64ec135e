//! Log anomaly detection built on severity-labeled log instructions.
//!
//! The pipeline has three legs:
//!
//! 1. [`miner`] walks source trees, extracts log instructions (static text +
//!    log level) and folds them into a two-class severity-level (SL) dataset:
//!    `info` maps to *normal*, `error`/`fatal`/`critical` map to *abnormal*.
//! 2. [`model`] pretrains a small Transformer-style encoder to classify the
//!    severity group of an instruction, then finetunes a projection head with
//!    a hyperspherical one-class loss against unlabeled target-system logs,
//!    using the SL *abnormal* class as the anomalous contrast.
//! 3. [`detector`] scores target logs by inverse squared distance to the
//!    hypersphere center and thresholds the score; [`eval`] handles dataset
//!    adapters, splits, grouping and metrics.
//!
//! [`study`] quantifies why the SL data works at all: per-n-gram severity
//! entropy and sentiment coverage over the two groups.

pub mod artifact;
pub mod cli;
pub mod detector;
pub mod error;
pub mod eval;
pub mod miner;
pub mod model;
pub mod preprocess;
pub mod study;

pub use error::{Error, Result};
