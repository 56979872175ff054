//! Graph InfoClust (GIC).
//!
//! Unsupervised node representation learning that maximizes mutual
//! information between node embeddings and two kinds of summaries: a global
//! graph summary and per-node cluster summaries produced by a differentiable
//! soft K-means layer. The crate also ships the downstream evaluation
//! harness (node classification, link prediction, clustering, silhouette).
//!
//! Module map:
//!
//! * [`graph`]: attributed graphs, loading, LCC extraction, adjacency
//!   normalization, splits and feature corruption.
//! * [`kernels`]: dense/sparse matrices and the elementwise kernels.
//! * [`cluster`]: the differentiable soft K-means layer.
//! * [`model`]: encoder, summaries, discriminators, loss and backward pass.
//! * [`train`]: Adam, early stopping, training and model selection.
//! * [`eval`]: evaluation protocols and metrics.
//! * [`pipeline`]: task protocols that tie training and evaluation together.
//! * [`cli`]: the `gic` command-line front end.

// Dense numeric kernels read most clearly with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod train;

pub use error::{GicError, Result};
