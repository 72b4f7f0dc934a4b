//! Multilingual graph-based dependency parsing with language-specific
//! attention-head subnetworks.
//!
//! The crate contains a small transformer encoder with maskable attention
//! heads and hand-written reverse-mode gradients, a biaffine arc/label
//! scorer with Chu-Liu/Edmonds decoding, head-importance pruning to find
//! per-language subnetworks, static and dynamic (straight-through) masked
//! training in a non-episodic and a first-order MAML regime, few-shot
//! adaptation to unseen languages, and gradient-conflict analysis.

pub mod analysis;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod layout;
pub mod model;
pub mod parser;
pub mod subnet;
pub mod trainers;
pub mod treebank;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
