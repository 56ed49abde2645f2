//! Controllable pseudo-label generation for long-tailed semi-supervised
//! classification.
//!
//! The crate trains a small two-headed MLP on a labeled set whose class
//! counts follow a long tail, plus an unlabeled set with an unknown and
//! possibly mismatched class distribution. Only unlabeled samples that pass a
//! weak/strong agreement filter and a vote are promoted into the labeled
//! pool, so the class prior used for logit adjustment stays known at every
//! step.
//!
//! Modules map onto the pipeline:
//!
//! - [`data`]: synthetic long-tailed splits, CSV IO, weak and strong views
//! - [`model`]: encoder and heads, manual backprop, SGD and checkpoints
//! - [`loss`]: logit-adjusted and consistency losses
//! - [`cycle`]: reliability mask, vote registry, labeled pool and prior
//! - [`caa`]: class-aware feature augmentation for minority classes
//! - [`trainer`]: the training loop, baselines and inference
//! - [`metrics`]: evaluation, pseudo-label audit, significance tests
//! - [`experiment`]: multi-seed runs, comparisons and ablations
//!
//! ```
//! use cpg::data::{generate_splits, DatasetSpec, UnlabeledShape};
//!
//! let splits = generate_splits(&DatasetSpec::desk_scale(UnlabeledShape::Inverse, 0)).unwrap();
//! assert_eq!(splits.labeled.len(), 100 + 56 + 31 + 17 + 10);
//! ```

pub mod caa;
pub mod cycle;
pub mod data;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
