//! Variable-context-window emotion recognition in conversation.
//!
//! The crate bundles a small reverse-mode autodiff engine, a transformer
//! utterance encoder, speaker-aware attention units, a top-k window gate,
//! per-window context fields, and the training/evaluation harness used by
//! the `vwerc` command-line tool.

pub mod autodiff;
pub mod context_fields;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod speaker_units;
pub mod tensor;
pub mod training_eval;
pub mod window_gate;

pub use error::{Error, Result};
