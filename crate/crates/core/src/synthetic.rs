//! Seeded synthetic data: topic corpora with topic-aligned teacher embeddings,
//! and labelled two-cluster embeddings for scorer experiments.

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus_io::{Document, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::model::kernels::l2_normalize_in_place;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicCorpusConfig {
    pub n_docs: usize,
    pub n_topics: usize,
    pub lexicon_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub teacher_dim: usize,
    pub noise: f64,
    /// Zipf exponent of each topic's unigram distribution.
    pub zipf_exponent: f64,
    pub seed: u64,
    /// Prefix for generated document ids.
    pub id_prefix: String,
}

impl Default for TopicCorpusConfig {
    fn default() -> Self {
        Self {
            n_docs: 5000,
            n_topics: 20,
            lexicon_size: 5000,
            min_len: 100,
            max_len: 300,
            teacher_dim: 24,
            noise: 0.05,
            zipf_exponent: 1.0,
            seed: 0,
            id_prefix: "doc".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TopicCorpus {
    pub docs: Vec<Document>,
    pub topics: Vec<usize>,
    /// Row `i` is `normalize(onehot(topic_i) + N(0, noise²))`.
    pub teacher: EmbeddingMatrix,
}

/// Token string for lexicon entry `j`.
pub fn lexicon_word(j: usize) -> String {
    format!("w{j}")
}

/// Each topic ranks the lexicon in its own random order and draws tokens iid
/// from a Zipf distribution over that ranking. Topics are assigned round-robin
/// so every topic has ⌊n/topics⌋ or ⌈n/topics⌉ documents.
pub fn generate_topic_corpus(cfg: &TopicCorpusConfig) -> Result<TopicCorpus> {
    if cfg.n_topics == 0 || cfg.lexicon_size == 0 || cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::Config(format!("invalid topic corpus config {cfg:?}")));
    }
    if cfg.teacher_dim < cfg.n_topics {
        return Err(Error::Config(format!(
            "teacher_dim {} must be at least n_topics {}",
            cfg.teacher_dim, cfg.n_topics
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf: Vec<f64> = (0..cfg.lexicon_size).map(|r| 1.0 / ((r + 1) as f64).powf(cfg.zipf_exponent)).collect();
    let rank_dist = WeightedIndex::new(&zipf).map_err(|e| Error::Config(e.to_string()))?;
    let rankings: Vec<Vec<usize>> = (0..cfg.n_topics)
        .map(|_| {
            let mut perm: Vec<usize> = (0..cfg.lexicon_size).collect();
            perm.shuffle(&mut rng);
            perm
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut docs = Vec::with_capacity(cfg.n_docs);
    let mut topics = Vec::with_capacity(cfg.n_docs);
    let mut teacher = Vec::with_capacity(cfg.n_docs * cfg.teacher_dim);
    for i in 0..cfg.n_docs {
        let topic = i % cfg.n_topics;
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let words: Vec<String> = (0..len).map(|_| lexicon_word(rankings[topic][rank_dist.sample(&mut rng)])).collect();
        docs.push(Document::new(format!("{}{i:06}", cfg.id_prefix), words.join(" ")));
        topics.push(topic);
        let mut row: Vec<f32> =
            (0..cfg.teacher_dim).map(|k| (f64::from(u8::from(k == topic)) + noise.sample(&mut rng)) as f32).collect();
        l2_normalize_in_place(&mut row);
        teacher.extend(row);
    }
    let ids = docs.iter().map(|d| d.id.clone()).collect();
    let teacher = EmbeddingMatrix::new(ids, cfg.teacher_dim, teacher)?;
    Ok(TopicCorpus { docs, topics, teacher })
}

/// `n` unit vectors in `d` dimensions from two Gaussian clusters around random
/// unit centres; label 1 for the first cluster. Classes alternate.
pub fn two_cluster_embeddings(n: usize, d: usize, spread: f64, seed: u64) -> Result<(EmbeddingMatrix, Vec<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut centre = || {
        let mut c: Vec<f64> = (0..d).map(|_| gauss.sample(&mut rng)).collect();
        l2_normalize_in_place(&mut c);
        c
    };
    let centres = [centre(), centre()];
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = &centres[i % 2];
        let mut row: Vec<f32> = c.iter().map(|&x| (x + spread * gauss.sample(&mut rng)) as f32).collect();
        l2_normalize_in_place(&mut row);
        values.extend(row);
        labels.push(if i % 2 == 0 { 1.0 } else { 0.0 });
    }
    let ids = (0..n).map(|i| format!("e{i:06}")).collect();
    Ok((EmbeddingMatrix::new(ids, d, values)?, labels))
}
