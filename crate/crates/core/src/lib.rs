//! Sparse mutation decompositions for fine tuning trained networks.
//!
//! A trained parent is perturbed with masked Gaussian noise restricted to a
//! random subspace of its parameters. Children are drawn with mirrored and
//! anti-random sampling, scored on a validation split, and the best are
//! combined either by averaging their weights or as a softmax ensemble.
//!
//! - [`nn`]: the feed-forward kernel, training and checkpoints
//! - [`datasets`]: interleaved spirals, splitting and CSV
//! - [`mutation`]: masks, noise, `γ = N∘M` and population spawning
//! - [`divergence`]: MSE/KL probes and the KL-targeted grid search
//! - [`evolution`]: fitness, selection, averaging, ensembles, ablations
//! - [`metrics`]: accuracy, NLL and ECE
//! - [`harness`]: the JSON-configured pipeline behind the `smd` binary
//!
//! The crate's `examples/` directory has one runnable program per capability.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod divergence;
pub mod error;
pub mod evolution;
pub mod harness;
pub mod matrix;
pub mod metrics;
pub mod mutation;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub use matrix::Matrix;
