//! Sequence-enhanced capsule networks for few-shot text classification.
//!
//! The model embeds a token sequence as primary capsules, runs it through
//! stacked seq-caps layers (an LSTM that restores word order followed by
//! dynamic routing by agreement), adds an attention-pooled residual of the
//! primary capsules, and classifies with fully connected layers trained
//! under focal loss.
//!
//! Everything runs on the small reverse-mode engine in [`autograd`]:
//!
//! - [`capsule`]: squashing, shared-weight transforms, dynamic routing and
//!   its clustering objective
//! - [`sequence`]: the LSTM encoder and attention residual unit
//! - [`model`]: configuration, parameters, forward pass and focal loss
//! - [`data`]: JSONL corpora, vocabularies, word2vec embeddings and
//!   synthetic long-tailed corpora
//! - [`train`]: Adam, the training loop, macro metrics, frequency buckets
//!   and checkpoints
//! - [`gradcheck`]: the finite-difference suite
//! - [`cli`]: the `secaps` command line
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod autograd;
pub mod capsule;
pub mod cli;
pub mod data;
mod error;
pub mod gradcheck;
pub mod model;
pub mod sequence;
pub mod train;

pub use error::{Error, Result};
