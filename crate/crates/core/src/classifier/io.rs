//! `LUXC` scorer files.
//!
//! Layout (little-endian): magic, version u32, layer count u32, then per layer
//! d_out u32, d_in u32, row-major f32 weights and d_out f32 biases.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DenseLayer, ScorerMlp};
use crate::binio::{LeReader, LeWriter};
use crate::error::{Error, Result};

pub const SCORER_MAGIC: &[u8; 4] = b"LUXC";

const MAX_WEIGHTS: usize = 1 << 32;

pub fn write_scorer_to<W: Write>(out: W, mlp: &ScorerMlp) -> Result<W> {
    mlp.validate()?;
    let mut w = LeWriter::new(out);
    w.header(SCORER_MAGIC)?;
    w.u32(mlp.layers.len() as u32)?;
    for l in &mlp.layers {
        w.u32(l.d_out as u32)?;
        w.u32(l.d_in as u32)?;
        w.f32s(&l.weights)?;
        w.f32s(&l.bias)?;
    }
    w.finish()
}

pub fn read_scorer_from<R: Read>(input: R) -> Result<ScorerMlp> {
    let mut r = LeReader::new(input, "scorer");
    r.header(SCORER_MAGIC)?;
    let count = r.u32()? as usize;
    if count == 0 || count > 64 {
        return Err(Error::Corrupt(format!("scorer: implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for k in 0..count {
        let (d_out, d_in) = (r.u32()? as usize, r.u32()? as usize);
        let len = d_out
            .checked_mul(d_in)
            .filter(|&c| c <= MAX_WEIGHTS)
            .ok_or_else(|| Error::Corrupt(format!("scorer: layer {k} is implausibly large")))?;
        let weights = r.f32s(len)?;
        let bias = r.f32s(d_out)?;
        layers.push(DenseLayer { d_out, d_in, weights, bias });
    }
    r.expect_eof()?;
    let mlp = ScorerMlp { layers };
    mlp.validate().map_err(|e| Error::Corrupt(format!("scorer: {e}")))?;
    Ok(mlp)
}

pub fn save_scorer(path: impl AsRef<Path>, mlp: &ScorerMlp) -> Result<()> {
    write_scorer_to(BufWriter::new(File::create(path)?), mlp)?;
    Ok(())
}

pub fn load_scorer(path: impl AsRef<Path>) -> Result<ScorerMlp> {
    read_scorer_from(BufReader::new(File::open(path)?))
}
