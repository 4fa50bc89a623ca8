//! The lexical-dense embedding model.
//!
//! `embed` runs tokenize → featurize → sparse first layer → (ReLU, L2) per
//! hidden layer → final projection → L2. A document that matches no
//! vocabulary ngram yields the all-zero embedding.

mod io;
pub mod kernels;
mod network;

use rayon::prelude::*;

pub use io::{load_model, read_model_from, save_model, write_model_to, MODEL_MAGIC};
pub use network::{Activation, ForwardCache, InputLayer, LayerWeights, Network};

use crate::corpus_io::{Document, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::featurizer::{Featurizer, SparseVector};
use crate::tokenizer::{tokenizer_for_id, TokenSeq, Tokenizer};
use crate::vocab_miner::{IdfVector, MinedVocab, NgramVocab, IDF_FORMULA};

/// Layer widths after the vocabulary in the reference configuration.
pub const DEFAULT_DIMS: [usize; 4] = [92, 3072, 3072, 192];

/// Documents per block in batched inference.
const BLOCK: usize = 64;

/// Gathers and scales only the columns of `layer` touched by `s`.
pub fn sparse_dense_matvec(layer: &InputLayer<f32>, s: &SparseVector) -> Result<Vec<f32>> {
    if s.dim() != layer.vocab_dim {
        return Err(Error::DimensionMismatch(format!(
            "sparse vector dim {} vs layer input {}",
            s.dim(),
            layer.vocab_dim
        )));
    }
    let mut y = vec![0.0; layer.d_out];
    kernels::sparse_columns_matvec(&layer.columns, layer.d_out, s, &mut y);
    Ok(y)
}

/// Unit-norm embedding, or all zeros for a document with no vocabulary hits.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseEmbedding(pub Vec<f32>);

impl DenseEmbedding {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct LexicalDenseModel {
    vocab: NgramVocab,
    idf: IdfVector,
    idf_formula: String,
    network: Network<f32>,
    featurizer: Featurizer,
}

impl PartialEq for LexicalDenseModel {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
            && self.idf_formula == other.idf_formula
            && self.idf.0.iter().map(|v| v.to_bits()).eq(other.idf.0.iter().map(|v| v.to_bits()))
            && self.network.dims() == other.network.dims()
            && self.network.parameters().map(f32::to_bits).eq(other.network.parameters().map(f32::to_bits))
    }
}

impl LexicalDenseModel {
    pub fn new(
        vocab: NgramVocab,
        idf: IdfVector,
        idf_formula: impl Into<String>,
        network: Network<f32>,
    ) -> Result<Self> {
        if idf.len() != vocab.len() {
            return Err(Error::DimensionMismatch(format!("IDF has {} entries, vocabulary {}", idf.len(), vocab.len())));
        }
        if idf.weights().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("IDF weights must be finite and non-negative".into()));
        }
        if network.vocab_dim() != vocab.len() {
            return Err(Error::DimensionMismatch(format!(
                "first layer input width {} differs from vocabulary size {}",
                network.vocab_dim(),
                vocab.len()
            )));
        }
        network.validate()?;
        let featurizer = Featurizer::new(&vocab, &idf)?;
        Ok(Self { vocab, idf, idf_formula: idf_formula.into(), network, featurizer })
    }

    /// Fresh model over a mined vocabulary with seeded random weights.
    pub fn init(mined: &MinedVocab, dims: &[usize], seed: u64) -> Result<Self> {
        let network = Network::init(mined.vocab.len(), dims, seed)?;
        Self::new(mined.vocab.clone(), mined.idf(), IDF_FORMULA, network)
    }

    pub fn vocab(&self) -> &NgramVocab {
        &self.vocab
    }

    pub fn idf(&self) -> &IdfVector {
        &self.idf
    }

    pub fn idf_formula(&self) -> &str {
        &self.idf_formula
    }

    pub fn tokenizer_id(&self) -> &str {
        self.vocab.tokenizer_id()
    }

    pub fn network(&self) -> &Network<f32> {
        &self.network
    }

    /// Replaces the weights; the new network must have the same shape.
    pub fn set_network(&mut self, network: Network<f32>) -> Result<()> {
        if network.dims() != self.network.dims() || network.vocab_dim() != self.network.vocab_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network shape {:?} differs from model shape {:?}",
                network.dims(),
                self.network.dims()
            )));
        }
        network.validate()?;
        self.network = network;
        Ok(())
    }

    pub(crate) fn network_mut(&mut self) -> &mut Network<f32> {
        &mut self.network
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn output_dim(&self) -> usize {
        self.network.output_dim()
    }

    /// The built-in tokenizer named by the model, if there is one.
    pub fn default_tokenizer(&self) -> Result<Box<dyn Tokenizer>> {
        tokenizer_for_id(self.tokenizer_id())
    }

    pub fn check_tokenizer(&self, tokenizer: &dyn Tokenizer) -> Result<()> {
        if tokenizer.id() != self.tokenizer_id() {
            return Err(Error::TokenizerMismatch {
                expected: self.tokenizer_id().to_string(),
                found: tokenizer.id().to_string(),
            });
        }
        Ok(())
    }

    pub fn featurize(&self, tokens: &TokenSeq) -> SparseVector {
        self.featurizer.featurize(tokens)
    }

    pub fn embed_sparse(&self, s: &SparseVector) -> Result<DenseEmbedding> {
        self.network.check_input(s)?;
        Ok(DenseEmbedding(self.network.forward(s)))
    }

    pub fn embed(&self, tokenizer: &dyn Tokenizer, doc: &Document) -> Result<DenseEmbedding> {
        self.check_tokenizer(tokenizer)?;
        let s = self.featurizer.featurize(&tokenizer.tokenize(&doc.text));
        Ok(DenseEmbedding(self.network.forward(&s)))
    }

    /// Row-major embeddings of a batch of sparse inputs, computed in
    /// parallel blocks. Rows equal [`embed_sparse`](Self::embed_sparse).
    pub fn forward_batch(&self, inputs: &[SparseVector]) -> Vec<f32> {
        let d = self.output_dim();
        let mut out = vec![0.0; inputs.len() * d];
        out.par_chunks_mut(BLOCK * d)
            .zip(inputs.par_chunks(BLOCK))
            .for_each(|(dst, block)| dst.copy_from_slice(&self.network.forward_block(block)));
        out
    }

    /// Embeds a batch; tokenization, featurization and the forward pass run
    /// per block in parallel. Row `i` belongs to `docs[i]`.
    pub fn embed_batch(&self, tokenizer: &dyn Tokenizer, docs: &[Document]) -> Result<EmbeddingMatrix> {
        self.check_tokenizer(tokenizer)?;
        let d = self.output_dim();
        let mut values = vec![0.0; docs.len() * d];
        values.par_chunks_mut(BLOCK * d).zip(docs.par_chunks(BLOCK)).for_each(|(dst, block)| {
            let sparse: Vec<SparseVector> =
                block.iter().map(|doc| self.featurizer.featurize(&tokenizer.tokenize(&doc.text))).collect();
            dst.copy_from_slice(&self.network.forward_block(&sparse));
        });
        let ids = docs.iter().map(|doc| doc.id.clone()).collect();
        EmbeddingMatrix::new_unchecked(ids, d, values)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::test_fixtures::tiny_model;
    use crate::tokenizer::SimpleTokenizer;

    #[test]
    fn tiny_forward_matches_hand_computation() {
        let m = tiny_model();
        let e = m.embed(&SimpleTokenizer, &Document::new("x", "a b")).unwrap();
        // s = (1, 2, 0, 0)/sqrt(5)
        let r5 = 5f64.sqrt();
        let s = [1.0 / r5, 2.0 / r5, 0.0, 0.0];
        let w1 = [[0.5, -0.2, 0.1, 0.3], [0.1, 0.4, -0.3, 0.2], [-0.4, 0.3, 0.2, 0.1]];
        let z1: Vec<f64> = w1.iter().map(|r| r.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>()).collect();
        let r1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let n1 = r1.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h1: Vec<f64> = r1.iter().map(|v| v / n1).collect();
        let w2 = [[0.7, -0.1, 0.2], [-0.3, 0.5, 0.4]];
        let z2: Vec<f64> = w2.iter().map(|r| r.iter().zip(&h1).map(|(a, b)| a * b).sum::<f64>()).collect();
        let n2 = z2.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (got, want) in e.values().iter().zip(z2.iter().map(|v| v / n2)) {
            assert!((*got as f64 - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn empty_document_embeds_to_zero() {
        let m = tiny_model();
        assert!(m.embed(&SimpleTokenizer, &Document::new("x", "")).unwrap().is_zero());
        assert!(m.embed(&SimpleTokenizer, &Document::new("x", "zzz q")).unwrap().is_zero());
    }

    #[test]
    fn tokenizer_mismatch_is_rejected() {
        struct Other;
        impl Tokenizer for Other {
            fn id(&self) -> &str {
                "wordpiece-x"
            }
            fn tokenize(&self, text: &str) -> TokenSeq {
                SimpleTokenizer.tokenize(text)
            }
        }
        let m = tiny_model();
        let err = m.embed(&Other, &Document::new("x", "a")).unwrap_err();
        assert!(matches!(err, Error::TokenizerMismatch { .. }));
        assert!(m.embed_batch(&Other, &[]).is_err());
    }

    #[test]
    fn sparse_matvec_edge_cases() {
        let m = tiny_model();
        let layer = &m.network().input;
        assert_eq!(sparse_dense_matvec(layer, &SparseVector::empty(4)).unwrap(), vec![0.0; 3]);
        let e2 = SparseVector::new(4, vec![2], vec![1.0]).unwrap();
        assert_eq!(sparse_dense_matvec(layer, &e2).unwrap(), layer.column(2).to_vec());
        assert!(sparse_dense_matvec(layer, &SparseVector::empty(5)).is_err());
    }

    #[test]
    fn batch_rows_match_single_embeds_and_follow_permutations() {
        let m = tiny_model();
        let texts = ["a b", "c", "", "d d a", "b c d", "a b"];
        let docs: Vec<Document> = texts.iter().enumerate().map(|(i, t)| Document::new(format!("{i}"), *t)).collect();
        let batch = m.embed_batch(&SimpleTokenizer, &docs).unwrap();
        for (i, doc) in docs.iter().enumerate() {
            assert_eq!(batch.row(i), m.embed(&SimpleTokenizer, doc).unwrap().values());
        }
        assert_eq!(batch.row(0), batch.row(5));
        let mut rev = docs.clone();
        rev.reverse();
        let rb = m.embed_batch(&SimpleTokenizer, &rev).unwrap();
        for i in 0..docs.len() {
            assert_eq!(rb.row(i), batch.row(docs.len() - 1 - i));
        }
    }

    #[test]
    fn set_network_rejects_other_shapes() {
        let mut m = tiny_model();
        let other = Network::init(4, &[5, 2], 1).unwrap();
        assert!(m.set_network(other).is_err());
        let same = Network::init(4, &[3, 2], 1).unwrap();
        m.set_network(same).unwrap();
    }

    #[test]
    fn init_places_activations() {
        let n: Network<f32> = Network::init(10, &[4, 3, 2], 7).unwrap();
        n.validate().unwrap();
        assert_eq!(n.input.activation, Activation::ReluThenL2Norm);
        assert_eq!(n.layers[0].activation, Activation::ReluThenL2Norm);
        assert_eq!(n.layers[1].activation, Activation::L2NormOnly);
        let bound = (6.0f32 / 14.0).sqrt();
        assert!(n.input.columns.iter().all(|w| w.abs() <= bound));
        assert_eq!(n, Network::init(10, &[4, 3, 2], 7).unwrap());
        assert_ne!(n, Network::init(10, &[4, 3, 2], 8).unwrap());
    }

    fn random_sparse(rng: &mut ChaCha8Rng, dim: usize, support: usize) -> SparseVector {
        let mut idx: Vec<u32> = (0..support).map(|_| rng.random_range(0..dim as u32)).collect();
        idx.sort_unstable();
        idx.dedup();
        let vals = idx.iter().map(|_| rng.random_range(0.01f32..1.0)).collect();
        SparseVector::new(dim, idx, vals).unwrap()
    }

    #[test]
    fn sparse_matvec_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let v = rng.random_range(1..2000);
            let d = rng.random_range(1..40);
            let net: Network<f32> = Network::init(v, &[d], rng.random()).unwrap();
            let support = rng.random_range(0..200);
            let s = random_sparse(&mut rng, v, support);
            let got = sparse_dense_matvec(&net.input, &s).unwrap();
            let dense = s.to_dense();
            let rows = net.input.to_row_major();
            let want: Vec<f64> =
                (0..d).map(|k| (0..v).map(|i| rows[k * v + i] as f64 * dense[i] as f64).sum()).collect();
            let err: f64 = got.iter().zip(&want).map(|(g, w)| (*g as f64 - w).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = want.iter().map(|w| w * w).sum::<f64>().sqrt();
            assert!(err <= 1e-5 * scale, "err {err} scale {scale}");
        }
    }

    proptest! {
        #[test]
        fn embeddings_are_unit_or_zero(text in "[abcd xyz]{0,40}") {
            let m = tiny_model();
            let e = m.embed(&SimpleTokenizer, &Document::new("q", text)).unwrap();
            let n = kernels::norm(e.values());
            prop_assert!(e.is_zero() || (n - 1.0).abs() < 1e-4);
        }

        #[test]
        fn embedding_ignores_id_and_trailing_whitespace(text in "[abcd ,]{0,30}", pad in "[ \n\t]{0,4}") {
            let m = tiny_model();
            let a = m.embed(&SimpleTokenizer, &Document::new("one", text.clone())).unwrap();
            let b = m.embed(&SimpleTokenizer, &Document::new("two", format!("{text}{pad}"))).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
