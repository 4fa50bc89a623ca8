//! Evaluation protocols: document-half matching and throughput.

pub mod bench;
pub mod halves;
pub mod matching;

pub use bench::{throughput_bench, BenchMode, BenchOptions, BenchReport, DenseReference, FirstLayerKernel, StageTimes};
pub use halves::{split_corpus, split_halves, HalfPair};
pub use matching::{error_at_k, partner_ranks, validate_ks, ErrorCurve};

use crate::corpus_io::{Document, EmbeddingMatrix};
use crate::error::Result;
use crate::model::LexicalDenseModel;
use crate::tokenizer::Tokenizer;

pub const DEFAULT_KS: [usize; 6] = [1, 2, 5, 10, 100, 1000];

/// Halves of every splittable document, interleaved `a, b, a, b, …`.
pub fn half_documents(pairs: &[HalfPair]) -> Vec<Document> {
    pairs.iter().flat_map(|p| [p.half_a.clone(), p.half_b.clone()]).collect()
}

/// Error@k of half matching given embeddings of [`half_documents`] output.
pub fn half_matching_curve(halves: &EmbeddingMatrix, unsplittable: usize, ks: &[usize]) -> Result<ErrorCurve> {
    let partner: Vec<usize> = (0..halves.n()).map(|i| i ^ 1).collect();
    let mut curve = error_at_k(halves, &partner, ks)?;
    curve.skipped += 2 * unsplittable;
    Ok(curve)
}

/// Splits, embeds and scores the half-matching task end to end.
pub fn evaluate_halves(
    model: &LexicalDenseModel,
    tokenizer: &dyn Tokenizer,
    docs: &[Document],
    ks: &[usize],
) -> Result<ErrorCurve> {
    validate_ks(ks)?;
    let (pairs, unsplittable) = split_corpus(docs);
    let emb = model.embed_batch(tokenizer, &half_documents(&pairs))?;
    half_matching_curve(&emb, unsplittable, ks)
}
