//! Task-similarity driven weighting of source models for semi-supervised
//! cross-task distillation.
//!
//! A small target classifier is trained on a few labeled examples plus the
//! soft outputs of several frozen source models on unlabeled data. Each
//! source is scored against a labeled probe set with a representation
//! similarity metric (PARC, RSA or linear CKA) and the scores are turned into
//! distillation weights.
//!
//! Modules, bottom up:
//!
//! * [`numerics`]: dense matrices, Pearson/Spearman/Kendall, HSIC.
//! * [`similarity`]: PARC, RSA and CKA scores of source representations.
//! * [`weighting`]: scores to simplex weights, plus baseline schemes.
//! * [`model`]: a small MLP with multiple heads and exact gradients.
//! * [`distill`]: the weighted multi-source objective and training loops.
//! * [`taskgen`]: synthetic Gaussian-cluster task universes and sources.
//! * [`eval`]: accuracy, correlation tables and top-k relative accuracy.
//! * [`experiment`]: in-memory synthetic runs over one target task.
//! * [`io`], [`config`], [`pipeline`]: file formats and the staged CLI.

pub mod config;
pub mod distill;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod seed;
pub mod similarity;
pub mod taskgen;
pub mod weighting;

pub use error::{Error, Result};
pub use numerics::Matrix;
