//! Streaming vocabulary mining and IDF weights.

mod space_saving;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

pub use space_saving::{Counter, SpaceSavingSketch};

use crate::binio::{checked_len, LeReader, LeWriter};
use crate::corpus_io::Document;
use crate::error::{Error, Result};
use crate::featurizer::for_each_ngram;
use crate::tokenizer::{Tokenizer, NGRAM_SEPARATOR};

pub const VOCAB_MAGIC: &[u8; 4] = b"LUXV";

/// Tag recorded in model files for the IDF formula below.
pub const IDF_FORMULA: &str = "ln((1+T)/(1+c))";

const MAX_VOCAB: u64 = 1 << 32;

/// Exact ngram → index map over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct NgramVocab {
    keys: Vec<String>,
    counts: Vec<u64>,
    index: FxHashMap<String, u32>,
    max_n: usize,
    tokenizer_id: String,
}

impl PartialEq for NgramVocab {
    fn eq(&self, other: &Self) -> bool {
        self.keys == other.keys
            && self.counts == other.counts
            && self.max_n == other.max_n
            && self.tokenizer_id == other.tokenizer_id
    }
}

impl NgramVocab {
    /// `keys[i]` gets index `i`.
    pub fn new(keys: Vec<String>, counts: Vec<u64>, max_n: usize, tokenizer_id: impl Into<String>) -> Result<Self> {
        if keys.len() != counts.len() {
            return Err(Error::DimensionMismatch(format!("{} keys but {} counts", keys.len(), counts.len())));
        }
        if max_n == 0 {
            return Err(Error::Config("max_n must be at least 1".into()));
        }
        if keys.len() as u64 >= MAX_VOCAB {
            return Err(Error::Config("vocabulary exceeds u32 index space".into()));
        }
        let mut index = FxHashMap::with_capacity_and_hasher(keys.len(), Default::default());
        for (i, key) in keys.iter().enumerate() {
            let order = key.split(NGRAM_SEPARATOR).count();
            if key.split(NGRAM_SEPARATOR).any(str::is_empty) || order > max_n {
                return Err(Error::InvalidInput(format!("vocab key {key:?} is not 1..={max_n} non-empty tokens")));
            }
            if counts[i] == 0 {
                return Err(Error::InvalidInput(format!("vocab key {key:?} has count 0")));
            }
            if index.insert(key.clone(), i as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocab key {key:?}")));
            }
        }
        Ok(Self { keys, counts, index, max_n, tokenizer_id: tokenizer_id.into() })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn tokenizer_id(&self) -> &str {
        &self.tokenizer_id
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn index_of(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, index: usize) -> &str {
        &self.keys[index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningConfig {
    pub max_n: usize,
    /// Sketch capacity `m`; must be at least `target_size`.
    pub capacity: usize,
    pub target_size: usize,
}

impl MiningConfig {
    /// Capacity defaults to four times the target size.
    pub fn new(max_n: usize, target_size: usize) -> Self {
        Self { max_n, capacity: target_size.saturating_mul(4), target_size }
    }
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self::new(5, 2_000_000)
    }
}

/// A mined vocabulary plus the number of ngrams streamed to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedVocab {
    pub vocab: NgramVocab,
    pub total_ngrams: u64,
}

impl MinedVocab {
    pub fn idf(&self) -> IdfVector {
        compute_idf(&self.vocab, self.total_ngrams)
    }
}

const MINING_CHUNK: usize = 1024;

/// Streams the corpus once through a single Space-Saving sketch and keeps the
/// top `target_size` ngrams. Tokenization of each chunk runs in parallel; the
/// sketch is updated from one thread in corpus order.
pub fn mine_vocab<I>(docs: I, tokenizer: &dyn Tokenizer, cfg: MiningConfig) -> Result<MinedVocab>
where
    I: IntoIterator<Item = Result<Document>>,
{
    if cfg.max_n == 0 || cfg.target_size == 0 {
        return Err(Error::Config("max_n and target size must be at least 1".into()));
    }
    if cfg.capacity < cfg.target_size {
        return Err(Error::Config(format!(
            "sketch capacity {} is below target size {}",
            cfg.capacity, cfg.target_size
        )));
    }
    let mut sketch: SpaceSavingSketch<Arc<str>> = SpaceSavingSketch::new(cfg.capacity);
    let mut chunk: Vec<Document> = Vec::with_capacity(MINING_CHUNK);
    let mut docs = docs.into_iter();
    loop {
        chunk.clear();
        for doc in docs.by_ref().take(MINING_CHUNK) {
            chunk.push(doc?);
        }
        if chunk.is_empty() {
            break;
        }
        let token_seqs: Vec<_> = chunk.par_iter().map(|d| tokenizer.tokenize(&d.text)).collect();
        for tokens in &token_seqs {
            for_each_ngram(tokens.tokens(), cfg.max_n, |key| sketch.update_ref(key));
        }
    }
    if sketch.total() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let top = sketch.topk(cfg.target_size);
    let (keys, counts): (Vec<String>, Vec<u64>) = top.into_iter().map(|(k, c, _)| (k.to_string(), c)).unzip();
    let vocab = NgramVocab::new(keys, counts, cfg.max_n, tokenizer.id())?;
    Ok(MinedVocab { vocab, total_ngrams: sketch.total() })
}

/// Non-negative per-entry weights aligned with vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfVector(pub Vec<f32>);

impl IdfVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &[f32] {
        &self.0
    }
}

/// `ln((1 + T) / (1 + c_i))` with `T` the number of ngrams streamed.
///
/// Since every estimated count satisfies `c_i ≤ T`, all weights are `≥ 0`.
pub fn compute_idf(vocab: &NgramVocab, total_ngrams: u64) -> IdfVector {
    let t = total_ngrams as f64;
    IdfVector(vocab.counts().iter().map(|&c| ((1.0 + t) / (1.0 + c as f64)).ln().max(0.0) as f32).collect())
}

pub fn write_vocab_to<W: Write>(out: W, mined: &MinedVocab) -> Result<W> {
    let v = &mined.vocab;
    let mut w = LeWriter::new(out);
    w.header(VOCAB_MAGIC)?;
    w.u64(v.len() as u64)?;
    w.u32(v.max_n() as u32)?;
    w.str(v.tokenizer_id())?;
    for (key, &count) in v.keys().iter().zip(v.counts()) {
        w.str(key)?;
        w.u64(count)?;
    }
    w.u64(mined.total_ngrams)?;
    w.finish()
}

pub fn read_vocab_from<R: Read>(input: R) -> Result<MinedVocab> {
    let mut r = LeReader::new(input, "vocabulary");
    r.header(VOCAB_MAGIC)?;
    let n = checked_len("vocabulary", r.u64()?, MAX_VOCAB)?;
    let max_n = r.u32()? as usize;
    let tokenizer_id = r.str()?;
    let mut keys = Vec::with_capacity(n.min(1 << 20));
    let mut counts = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        keys.push(r.str()?);
        counts.push(r.u64()?);
    }
    let total_ngrams = r.u64()?;
    r.expect_eof()?;
    let vocab =
        NgramVocab::new(keys, counts, max_n, tokenizer_id).map_err(|e| Error::Corrupt(format!("vocabulary: {e}")))?;
    if vocab.counts().iter().any(|&c| c > total_ngrams) {
        return Err(Error::Corrupt("vocabulary: count exceeds total ngrams".into()));
    }
    Ok(MinedVocab { vocab, total_ngrams })
}

pub fn write_vocab(path: impl AsRef<Path>, mined: &MinedVocab) -> Result<()> {
    write_vocab_to(BufWriter::new(File::create(path)?), mined)?;
    Ok(())
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<MinedVocab> {
    read_vocab_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use super::*;
    use crate::tokenizer::SimpleTokenizer;

    fn docs(texts: &[&str]) -> Vec<Result<Document>> {
        texts.iter().enumerate().map(|(i, t)| Ok(Document::new(format!("d{i}"), *t))).collect()
    }

    fn key(parts: &[&str]) -> String {
        parts.join("\u{1f}")
    }

    #[test]
    fn single_doc_bigram_vocab() {
        let cfg = MiningConfig { max_n: 2, capacity: 12, target_size: 3 };
        let mined = mine_vocab(docs(&["a b"]), &SimpleTokenizer, cfg).unwrap();
        assert_eq!(mined.vocab.keys(), &["a".to_string(), key(&["a", "b"]), "b".to_string()]);
        assert_eq!(mined.vocab.counts(), &[1, 1, 1]);
        assert_eq!(mined.total_ngrams, 3);
        assert_eq!(mined.vocab.tokenizer_id(), "simple-v1");
    }

    #[test]
    fn target_one_takes_the_most_frequent() {
        let cfg = MiningConfig::new(2, 1);
        let mined = mine_vocab(docs(&["b a b", "c b"]), &SimpleTokenizer, cfg).unwrap();
        assert_eq!(mined.vocab.keys(), &["b".to_string()]);
        assert_eq!(mined.vocab.counts(), &[3]);
    }

    #[test]
    fn ubiquitous_token_gets_index_zero() {
        let texts: Vec<String> = (0..50).map(|i| format!("x w{i} q{} x", i % 7)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let mined = mine_vocab(docs(&refs), &SimpleTokenizer, MiningConfig::new(2, 20)).unwrap();
        assert_eq!(mined.vocab.index_of("x"), Some(0));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let err = mine_vocab(docs(&["", "  "]), &SimpleTokenizer, MiningConfig::new(2, 4)).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }

    #[test]
    fn capacity_below_target_is_rejected() {
        let cfg = MiningConfig { max_n: 1, capacity: 2, target_size: 3 };
        assert!(matches!(mine_vocab(docs(&["a"]), &SimpleTokenizer, cfg), Err(Error::Config(_))));
    }

    #[test]
    fn corpus_errors_propagate() {
        let mut input = docs(&["a"]);
        input.push(Err(Error::MissingField { line: 2, field: "text" }));
        let err = mine_vocab(input, &SimpleTokenizer, MiningConfig::new(1, 1)).unwrap_err();
        assert!(matches!(err, Error::MissingField { line: 2, .. }));
    }

    #[test]
    fn mining_is_deterministic() {
        let texts: Vec<String> = (0..300).map(|i| format!("t{} t{} t{}", i % 13, i % 29, i % 5)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let cfg = MiningConfig { max_n: 3, capacity: 40, target_size: 25 };
        let a = mine_vocab(docs(&refs), &SimpleTokenizer, cfg).unwrap();
        let b = mine_vocab(docs(&refs), &SimpleTokenizer, cfg).unwrap();
        let ba = write_vocab_to(Vec::new(), &a).unwrap();
        let bb = write_vocab_to(Vec::new(), &b).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn idf_values() {
        let v = NgramVocab::new(vec!["a".into(), "b".into(), "c".into()], vec![99, 1, 10], 1, "simple-v1").unwrap();
        let idf = compute_idf(&v, 99);
        assert_eq!(idf.0[0], 0.0);
        assert!((idf.0[1] - 50f32.ln()).abs() < 1e-6);
        assert!((idf.0[1] - 3.912).abs() < 1e-3);
        assert!(idf.0[1] > idf.0[2] && idf.0[2] > idf.0[0]);
    }

    #[test]
    fn vocab_validation() {
        assert!(NgramVocab::new(vec!["a".into(), "a".into()], vec![1, 1], 1, "t").is_err());
        assert!(NgramVocab::new(vec!["a".into()], vec![0], 1, "t").is_err());
        assert!(NgramVocab::new(vec![key(&["a", "b"])], vec![1], 1, "t").is_err());
        assert!(NgramVocab::new(vec![key(&["a", ""])], vec![1], 2, "t").is_err());
    }

    #[test]
    fn vocab_dump_round_trips_and_rejects_bad_magic() {
        let cfg = MiningConfig::new(2, 5);
        let mined = mine_vocab(docs(&["a b c", "b c d"]), &SimpleTokenizer, cfg).unwrap();
        let bytes = write_vocab_to(Vec::new(), &mined).unwrap();
        assert_eq!(&bytes[..4], b"LUXV");
        assert_eq!(read_vocab_from(Cursor::new(bytes.clone())).unwrap(), mined);
        let mut bad = bytes.clone();
        bad[1] = b'Z';
        assert!(matches!(read_vocab_from(Cursor::new(bad)), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(read_vocab_from(Cursor::new(bytes[..bytes.len() - 1].to_vec())), Err(Error::Corrupt(_))));
    }
}
