//! ECG sequence classification built on compressed token embeddings.
//!
//! The pipeline treats every timestamp of a 12-lead ECG record as a token:
//! unique (quantized) 12-channel instants form a vocabulary, a small dense
//! temporal autoencoder compresses each instant to a 6-dimensional code, and
//! those codes become the weights of an embedding layer feeding a
//! CNN → LSTM → self-attention classifier over the token sequence.
//!
//! Modules:
//! - [`engine`] — dense-tensor numerics with reverse-mode differentiation,
//!   the Adam optimizer, and a finite-difference gradient checker.
//! - [`dataset`] — record model, disk format, synthetic generator, SMOTE
//!   balancing, and stratified 80-10-10 splitting.
//! - [`preprocess`] — padding, window-9 context/target pairs, vocabulary
//!   construction, and tokenization.
//! - [`tae`] — the temporal autoencoder and its two-batch training protocol.
//! - [`clsa`] — the CNN-LSTM-self-attention classifier.
//! - [`metrics`] — confusion matrix, per-class scores, model-size reports.
//! - [`store`] — bit-exact checkpoint containers.
//! - [`pipeline`] — end-to-end train/predict orchestration shared by the CLI.

pub mod clsa;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod store;
pub mod tae;

pub use error::{Error, Result};
