//! TF-IDF bag-of-ngrams features over a fixed vocabulary.

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::tokenizer::{TokenSeq, NGRAM_SEPARATOR};
use crate::vocab_miner::{IdfVector, NgramVocab};

/// Sparse vector with strictly increasing indices and positive values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl SparseVector {
    pub fn new(dim: usize, indices: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch(format!("{} indices but {} values", indices.len(), values.len())));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("sparse indices must be strictly increasing".into()));
        }
        if indices.last().is_some_and(|&i| i as usize >= dim) {
            return Err(Error::InvalidInput(format!("sparse index out of range for dim {dim}")));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("sparse values must be positive and finite".into()));
        }
        Ok(Self { dim, indices, values })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, indices: Vec::new(), values: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f32 {
        self.values.iter().map(|v| v * v).sum::<f32>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// Calls `f` with every ngram key of orders `1..=max_n`, all unigrams first,
/// then all bigrams, and so on. Keys join tokens with [`NGRAM_SEPARATOR`].
pub fn for_each_ngram<S: AsRef<str>>(tokens: &[S], max_n: usize, mut f: impl FnMut(&str)) {
    let mut key = String::new();
    for n in 1..=max_n.min(tokens.len()) {
        for window in tokens.windows(n) {
            key.clear();
            for (j, t) in window.iter().enumerate() {
                if j > 0 {
                    key.push(NGRAM_SEPARATOR);
                }
                key.push_str(t.as_ref());
            }
            f(&key);
        }
    }
}

pub fn extract_ngrams(tokens: &TokenSeq, max_n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for_each_ngram(tokens.tokens(), max_n, |k| out.push(k.to_owned()));
    out
}

fn check_dims(vocab: &NgramVocab, idf: &IdfVector) -> Result<()> {
    if vocab.len() != idf.len() {
        return Err(Error::Config(format!("vocabulary has {} entries but IDF vector has {}", vocab.len(), idf.len())));
    }
    Ok(())
}

/// Builds the normalized vector from vocabulary hits. `hits` is sorted in
/// place; repeated indices are occurrence counts.
fn weigh_and_normalize(dim: usize, hits: &mut [u32], idf: &[f32]) -> SparseVector {
    hits.sort_unstable();
    let mut indices = Vec::new();
    let mut raw = Vec::new();
    let mut k = 0;
    while k < hits.len() {
        let idx = hits[k];
        let mut count = 0u32;
        while k < hits.len() && hits[k] == idx {
            count += 1;
            k += 1;
        }
        let w = count as f64 * idf[idx as usize] as f64;
        if w > 0.0 {
            indices.push(idx);
            raw.push(w);
        }
    }
    finish(dim, indices, raw)
}

fn finish(dim: usize, indices: Vec<u32>, raw: Vec<f64>) -> SparseVector {
    let norm = raw.iter().map(|w| w * w).sum::<f64>().sqrt();
    if indices.is_empty() || norm == 0.0 {
        return SparseVector::empty(dim);
    }
    let values = raw.iter().map(|w| (w / norm) as f32).collect();
    SparseVector { dim, indices, values }
}

/// Reference featurization by string lookup of every extracted ngram.
///
/// Out-of-vocabulary ngrams are dropped; a document with no hits yields the
/// empty vector.
pub fn featurize(tokens: &TokenSeq, vocab: &NgramVocab, idf: &IdfVector) -> Result<SparseVector> {
    check_dims(vocab, idf)?;
    let mut hits = Vec::new();
    for_each_ngram(tokens.tokens(), vocab.max_n(), |k| {
        if let Some(i) = vocab.index_of(k) {
            hits.push(i);
        }
    });
    Ok(weigh_and_normalize(vocab.len(), &mut hits, idf.weights()))
}

const NO_ENTRY: u32 = u32::MAX;

/// Per-thread scratch reused across documents: token ids, a dense count per
/// vocabulary entry, and the entries touched so far.
#[derive(Default)]
struct Scratch {
    ids: Vec<u32>,
    counts: Vec<u32>,
    touched: Vec<u32>,
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Scratch> = std::cell::RefCell::new(Scratch::default());
}

/// Token-id trie over the vocabulary. Each token is hashed once per document
/// and ngram extension walks integer edges, so longer orders cost no string
/// building. Root edges are a flat table indexed by token id.
#[derive(Debug, Clone)]
pub struct Featurizer {
    token_ids: FxHashMap<Box<str>, u32>,
    root: Vec<u32>,
    edges: FxHashMap<u64, u32>,
    node_entry: Vec<u32>,
    idf: Vec<f32>,
    max_n: usize,
}

impl Featurizer {
    pub fn new(vocab: &NgramVocab, idf: &IdfVector) -> Result<Self> {
        check_dims(vocab, idf)?;
        let mut token_ids: FxHashMap<Box<str>, u32> = FxHashMap::default();
        let mut root: Vec<u32> = Vec::new();
        let mut edges: FxHashMap<u64, u32> = FxHashMap::default();
        let mut node_entry = vec![NO_ENTRY];
        for (entry, key) in vocab.keys().iter().enumerate() {
            let mut node = 0u32;
            for token in key.split(NGRAM_SEPARATOR) {
                let next_id = token_ids.len() as u32;
                let tid = *token_ids.entry(token.into()).or_insert(next_id);
                if tid as usize >= root.len() {
                    root.resize(tid as usize + 1, NO_ENTRY);
                }
                let fresh = node_entry.len() as u32;
                let slot = if node == 0 {
                    &mut root[tid as usize]
                } else {
                    edges.entry((u64::from(node) << 32) | u64::from(tid)).or_insert(NO_ENTRY)
                };
                if *slot == NO_ENTRY {
                    *slot = fresh;
                    node_entry.push(NO_ENTRY);
                }
                node = *slot;
            }
            node_entry[node as usize] = entry as u32;
        }
        Ok(Self { token_ids, root, edges, node_entry, idf: idf.weights().to_vec(), max_n: vocab.max_n() })
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    fn count_hits(&self, tokens: &TokenSeq, s: &mut Scratch) {
        let Scratch { ids, counts, touched } = s;
        if counts.len() < self.dim() {
            counts.resize(self.dim(), 0);
        }
        ids.clear();
        ids.extend(tokens.iter().map(|t| self.token_ids.get(t).copied().unwrap_or(NO_ENTRY)));
        let mut hit = |entry: u32| {
            let c = &mut counts[entry as usize];
            if *c == 0 {
                touched.push(entry);
            }
            *c += 1;
        };
        for start in 0..ids.len() {
            let tid = ids[start];
            if tid == NO_ENTRY {
                continue;
            }
            let mut node = self.root[tid as usize];
            if node == NO_ENTRY {
                continue;
            }
            let entry = self.node_entry[node as usize];
            if entry != NO_ENTRY {
                hit(entry);
            }
            for &tid in ids[start + 1..].iter().take(self.max_n - 1) {
                if tid == NO_ENTRY {
                    break;
                }
                match self.edges.get(&((u64::from(node) << 32) | u64::from(tid))) {
                    Some(&next) => node = next,
                    None => break,
                }
                let entry = self.node_entry[node as usize];
                if entry != NO_ENTRY {
                    hit(entry);
                }
            }
        }
    }

    pub fn featurize(&self, tokens: &TokenSeq) -> SparseVector {
        SCRATCH.with(|cell| {
            let s = &mut *cell.borrow_mut();
            s.touched.clear();
            self.count_hits(tokens, s);
            s.touched.sort_unstable();
            let mut indices = Vec::with_capacity(s.touched.len());
            let mut raw = Vec::with_capacity(s.touched.len());
            for &idx in &s.touched {
                let count = std::mem::take(&mut s.counts[idx as usize]);
                let w = count as f64 * self.idf[idx as usize] as f64;
                if w > 0.0 {
                    indices.push(idx);
                    raw.push(w);
                }
            }
            finish(self.dim(), indices, raw)
        })
    }

    pub fn featurize_batch(&self, docs: &[TokenSeq]) -> Vec<SparseVector> {
        docs.par_iter().map(|t| self.featurize(t)).collect()
    }
}

/// Parallel [`featurize`] over a batch; output order matches input order.
pub fn featurize_batch(docs: &[TokenSeq], vocab: &NgramVocab, idf: &IdfVector) -> Result<Vec<SparseVector>> {
    check_dims(vocab, idf)?;
    docs.par_iter().map(|t| featurize(t, vocab, idf)).collect()
}
