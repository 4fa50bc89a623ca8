//! Small deterministic models shared by unit tests.

use crate::model::{Activation, InputLayer, LayerWeights, LexicalDenseModel, Network};
use crate::tokenizer::SimpleTokenizer;
use crate::vocab_miner::{IdfVector, NgramVocab, IDF_FORMULA};

/// V=4 vocabulary {a, b, c, d}, dims 4→3→2 with hand-picked weights.
pub(crate) fn tiny_model() -> LexicalDenseModel {
    let vocab = NgramVocab::new(
        ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
        vec![4, 3, 2, 1],
        1,
        SimpleTokenizer::ID,
    )
    .unwrap();
    let idf = IdfVector(vec![1.0, 2.0, 0.5, 1.5]);
    #[rustfmt::skip]
    let w1 = [
        0.5, -0.2, 0.1, 0.3,
        0.1, 0.4, -0.3, 0.2,
        -0.4, 0.3, 0.2, 0.1,
    ];
    #[rustfmt::skip]
    let w2 = vec![
        0.7, -0.1, 0.2,
        -0.3, 0.5, 0.4,
    ];
    let network = Network {
        input: InputLayer::from_row_major(3, 4, Activation::ReluThenL2Norm, &w1),
        layers: vec![LayerWeights { d_out: 2, d_in: 3, activation: Activation::L2NormOnly, weights: w2 }],
    };
    LexicalDenseModel::new(vocab, idf, IDF_FORMULA, network).unwrap()
}
