//! Peer-group self-distillation without negatives, projectors or pretext tasks.
//!
//! A pool of randomly initialized networks is trained by repeatedly picking one
//! student and `T` teachers per batch and regressing the student's embedding
//! onto the (frozen) teachers' embeddings of the very same view. Everything in
//! this crate is pure computation over in-memory buffers and builds without
//! `std`; file formats, logging and the command line live in the `herdkit`
//! crate.
//!
//! Module map:
//!
//! - [`config`], [`seed`], [`metrics`]: declarative run description, seed
//!   derivation and the append-only metrics log.
//! - [`data`]: CIFAR-10 record decoding, batching and the horizontal flip.
//! - [`nn`], [`model`]: layers with hand-written backward passes and the
//!   SimpleCNN architecture registry.
//! - [`loss`], [`optim`], [`herd`]: distillation losses, per-peer optimizers
//!   and the stop-gradient training step.
//! - [`probes`]: KNN / linear / MLP probes and macro-F1.
//! - [`analysis`]: cosine distance shift and plot-series shaping.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod herd;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod probes;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Scalar;
