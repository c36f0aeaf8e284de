//! Graph-augmented RDF-to-text generation toolkit.
//!
//! The library turns sets of subject/relation/object triples into fluent text
//! with a dual graph encoder and an attention LSTM decoder, trained with
//! teacher forcing and optionally fine-tuned with self-critical policy
//! gradients against an information-extraction reward.
//!
//! Pipeline overview:
//!
//! * [`triple`] — dataset records, tokenization, entity masking, vocabulary.
//! * [`graph`] — entity graph, meta-path extraction, Levi graph, adjacency
//!   normalization.
//! * [`autodiff`] — dense reverse-mode differentiation over `f64` tensors,
//!   gradient checking, Adam.
//! * [`model`] — parameter registry and initialization.
//! * [`encoder`] — bidirectional meta-path LSTM encoder and bidirectional
//!   GCN encoder.
//! * [`decoder`] — selection-gated dual-attention LSTM decoder (teacher
//!   forced, greedy, and sampled decoding).
//! * [`training`] — cross-entropy and self-critical losses, the training
//!   loop, and per-epoch reports.
//! * [`reward`] — pattern-based (or external-process) triple extraction and
//!   the extraction-count reward.
//! * [`eval`] — corpus BLEU, translation edit rate, and bucketed reports.
//! * [`checkpoint`] — portable text checkpoints for parameters and optimizer
//!   state.
//! * [`config`] — key=value configuration files with override precedence.
//! * [`embeddings`] — pre-trained word-vector loading.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod reward;
pub mod rng;
pub mod training;
pub mod triple;

pub use error::{Error, Result};
