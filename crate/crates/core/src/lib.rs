//! Image tagging by a decoder that writes object labels token by token.
//!
//! A small pre-norm transformer decoder reads projected image token
//! embeddings, a learned `[IMG]` boundary token and a text prompt, then
//! generates object labels as comma-delimited token spans. Labels are
//! decoupled from one another by a non-causal attention mask, which is what
//! makes one-shot sampling possible: the top-k first tokens are extended in
//! parallel inside a single packed sequence.
//!
//! Module map:
//!
//! - [`preprocess`]: caption cleaning and noun extraction into reference labels.
//! - [`tokenizer`]: toy merge-based tokenizer with `[IMG]` and `[SEP]`.
//! - [`layout`]: sequence layout, causal and label-decoupling masks, positions.
//! - [`model`]: the decoder, its file format and block truncation.
//! - [`sampling`]: greedy, beam and one-shot decoding plus ranking.
//! - [`metric`]: semantic recall/precision/F1, PR curves, top-k accuracy.
//! - [`train`]: loss, manual backprop, AdamW, synthetic data, gradient checks.
//! - [`bench`]: decode timing and repetition statistics.
//! - [`cli`]: the `nextlabel` command line.

pub mod bench;
pub mod cli;
pub mod config;
mod error;
pub mod fixtures;
pub mod layout;
pub mod metric;
pub mod model;
pub mod preprocess;
pub mod records;
pub mod sampling;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};

/// Token id within a [`tokenizer::Vocab`].
pub type TokenId = u32;

/// Prompt used at inference time.
pub const INFERENCE_PROMPT: &str = "the objects in the image are";

/// Prompt templates sampled during training; the first one doubles as the
/// inference prompt.
pub const TRAINING_PROMPTS: [&str; 10] = [
    "the objects in the image are",
    "the items present in the picture are",
    "the elements depicted in the image are",
    "the objects shown in the photograph are",
    "the items visible in the image are",
    "the objects that appear in the picture are",
    "the elements featured in the image are",
    "the items captured in the photograph are",
    "the elements seen in the picture are",
    "the items represented in the image are",
];
