//! Lexical-dense text embeddings on the CPU.
//!
//! Text is tokenized, turned into a TF-IDF bag of ngrams over a mined
//! vocabulary, and mapped to a dense unit vector by a small ReLU network whose
//! first layer is evaluated as a sparse-by-dense product. The network is
//! trained by matching the softmax-normalized off-diagonal rows of batch Gram
//! matrices against those of precomputed teacher embeddings.
//!
//! Pipeline stages:
//!
//! - [`vocab_miner`]: one streaming pass with a Space-Saving sketch picks the
//!   most frequent ngrams and their IDF weights.
//! - [`featurizer`]: tokens to sparse, L2-normalized TF-IDF vectors.
//! - [`model`]: the embedding network, its kernels and the `LUXM` file.
//! - [`distill`]: Gram-matrix distillation with Adam and a
//!   warmup-stable-decay schedule.
//! - [`classifier`]: MLP scorers over frozen embeddings and top-fraction
//!   selection.
//! - [`eval`]: document-half matching and throughput benchmarks.

mod binio;
pub mod classifier;
pub mod corpus_io;
pub mod distill;
pub mod error;
pub mod eval;
pub mod featurizer;
pub mod model;
pub mod synthetic;
pub mod tokenizer;
pub mod vocab_miner;

#[cfg(test)]
mod test_fixtures;

pub use error::{Error, Result};
