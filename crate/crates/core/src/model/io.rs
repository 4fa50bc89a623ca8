//! `LUXM` model files.
//!
//! Layout (little-endian): magic, version u32, tokenizer id, IDF formula tag,
//! max_n u32, V u64, V × (key, count u64), V × idf f32, layer count u32, then
//! per layer d_out u32, d_in u32, activation u8 and row-major f32 weights.
//! Strings are u32 length-prefixed UTF-8.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::network::{Activation, InputLayer, LayerWeights, Network};
use super::LexicalDenseModel;
use crate::binio::{checked_len, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::vocab_miner::{IdfVector, NgramVocab};

pub const MODEL_MAGIC: &[u8; 4] = b"LUXM";

const MAX_VOCAB: u64 = 1 << 32;
const MAX_WEIGHTS: usize = 1 << 34;

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{what} {v} exceeds u32")))
}

pub fn write_model_to<W: Write>(out: W, model: &LexicalDenseModel) -> Result<W> {
    let mut w = LeWriter::new(out);
    w.header(MODEL_MAGIC)?;
    w.str(model.tokenizer_id())?;
    w.str(model.idf_formula())?;
    let vocab = model.vocab();
    w.u32(dim_u32(vocab.max_n(), "max_n")?)?;
    w.u64(vocab.len() as u64)?;
    for (key, &count) in vocab.keys().iter().zip(vocab.counts()) {
        w.str(key)?;
        w.u64(count)?;
    }
    w.f32s(model.idf().weights())?;
    let net = model.network();
    w.u32(dim_u32(net.layers.len() + 1, "layer count")?)?;
    let input = &net.input;
    w.u32(dim_u32(input.d_out, "d_out")?)?;
    w.u32(dim_u32(input.vocab_dim, "d_in")?)?;
    w.u8(input.activation.tag())?;
    w.f32s(&input.to_row_major())?;
    for layer in &net.layers {
        w.u32(dim_u32(layer.d_out, "d_out")?)?;
        w.u32(dim_u32(layer.d_in, "d_in")?)?;
        w.u8(layer.activation.tag())?;
        w.f32s(&layer.weights)?;
    }
    w.finish()
}

fn corrupt(msg: String) -> Error {
    Error::Corrupt(format!("model: {msg}"))
}

pub fn read_model_from<R: Read>(input: R) -> Result<LexicalDenseModel> {
    let mut r = LeReader::new(input, "model");
    r.header(MODEL_MAGIC)?;
    let tokenizer_id = r.str()?;
    let idf_formula = r.str()?;
    let max_n = r.u32()? as usize;
    let v = checked_len("model vocabulary", r.u64()?, MAX_VOCAB)?;
    let mut keys = Vec::with_capacity(v.min(1 << 20));
    let mut counts = Vec::with_capacity(v.min(1 << 20));
    for _ in 0..v {
        keys.push(r.str()?);
        counts.push(r.u64()?);
    }
    let idf = IdfVector(r.f32s(v)?);
    let vocab = NgramVocab::new(keys, counts, max_n, tokenizer_id).map_err(|e| corrupt(e.to_string()))?;

    let layer_count = r.u32()? as usize;
    if layer_count == 0 {
        return Err(corrupt("no layers".into()));
    }
    let mut prev = v;
    let mut input = None;
    let mut layers = Vec::with_capacity(layer_count - 1);
    for k in 0..layer_count {
        let d_out = r.u32()? as usize;
        let d_in = r.u32()? as usize;
        if d_in != prev {
            let source = if k == 0 { "vocabulary size".to_string() } else { format!("layer {} output width", k - 1) };
            return Err(corrupt(format!("layer {k} has input width {d_in} but {source} is {prev}")));
        }
        if d_out == 0 {
            return Err(corrupt(format!("layer {k} has output width 0")));
        }
        let tag = r.u8()?;
        let activation =
            Activation::from_tag(tag).ok_or_else(|| corrupt(format!("layer {k} has unknown activation tag {tag}")))?;
        let count = d_out
            .checked_mul(d_in)
            .filter(|&c| c <= MAX_WEIGHTS)
            .ok_or_else(|| corrupt(format!("layer {k} is implausibly large ({d_out}×{d_in})")))?;
        let weights = r.f32s(count)?;
        if k == 0 {
            input = Some(InputLayer::from_row_major(d_out, d_in, activation, &weights));
        } else {
            layers.push(LayerWeights { d_out, d_in, activation, weights });
        }
        prev = d_out;
    }
    r.expect_eof()?;
    let network = Network { input: input.expect("layer_count ≥ 1"), layers };
    LexicalDenseModel::new(vocab, idf, idf_formula, network).map_err(|e| corrupt(e.to_string()))
}

pub fn save_model(path: impl AsRef<Path>, model: &LexicalDenseModel) -> Result<()> {
    write_model_to(BufWriter::new(File::create(path)?), model)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LexicalDenseModel> {
    read_model_from(BufReader::new(File::open(path)?))
}
