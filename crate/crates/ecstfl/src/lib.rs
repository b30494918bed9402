//! Desk-scale laboratory for expression-clustered spatiotemporal feature
//! learning (EC-STFL).
//!
//! EC-STFL is a mini-batch metric-learning loss: the ratio of
//! class-frequency-weighted intra-class feature distances to inter-class
//! feature distances, minimized jointly with softmax cross-entropy
//! (`L = L_s + lambda * L_ecstfl`). The inverse-class-frequency weights give
//! rare classes the same pull as frequent ones, which is the point on
//! heavily imbalanced data.
//!
//! The crate implements the loss with analytic gradients plus everything
//! needed to study it end to end on synthetic data:
//!
//! - [`annotation`]: multi-annotator vote distributions, threshold
//!   single-labeling, Fleiss's kappa with agreement bands.
//! - [`losses`]: EC-STFL, softmax cross-entropy, center loss, the joint
//!   objective, and finite-difference gradient checking.
//! - [`data`]: imbalanced synthetic clip generation, usable-frame filtering,
//!   16-frame temporal alignment, 5-fold splits.
//! - [`model`]: a tiny deterministic reference encoder and trainer with the
//!   10x learning-rate decay rule and seeded grid search.
//! - [`eval`]: confusion matrices, UAR/WAR, pooled cross-validation metrics,
//!   2-D feature projection.
//! - [`cli`]: the `ecstfl` binary's subcommands (`gen-data`, `train`,
//!   `eval`, `kappa`, `sweep`, `report`) with run manifests.
//!
//! Every run is reproducible: all randomness flows from one `u64` seed
//! through named sub-streams ([`rng::substream`]), and identical inputs
//! produce bit-identical artifacts.
//!
//! The `examples/` directory has one runnable program per capability; start
//! with `cargo run --example ecstfl_loss`.

pub mod annotation;
pub mod cli;
pub mod data;
mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
