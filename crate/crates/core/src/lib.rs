//! Toxic span detection toolkit.
//!
//! Posts annotated with toxic character offsets are tokenized, projected onto
//! per-token labels, encoded (hashed windowed embeddings or imported
//! contextual vectors), optionally augmented with a TF-IDF weight and a
//! word-list flag, and classified by either an independent softmax head or a
//! linear-chain CRF. Predictions are decoded back to character offsets and
//! scored with per-post span F1.

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod par;
pub mod spans;
pub mod synth;

pub use error::{Error, Result};
