//! Permutation-aware temporal set prediction.
//!
//! Given each user's sequence of element sets, the model predicts which
//! elements appear in the next set. Everything is hand-written: dense
//! matrices, the forward pass, its gradients, Adam, and the ranking metrics.
//!
//! Module map:
//!
//! - [`tensor`]: row-major matrices and the primitives with their gradients
//! - [`dataset`]: corpora, user splits, membership matrices, synthetic data
//! - [`model`]: parameters, forward, backward
//! - [`optim`]: Adam with decoupled weight decay, cosine schedule
//! - [`trainer`]: loss, epochs, early stopping, evaluation
//! - [`checkpoint`]: versioned, bit-exact persistence
//! - [`metrics`]: Recall@k, nDCG@k, PHR@k
//! - [`bench`]: inference latency harness
//! - [`cli`]: the `pietsp` command line

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
