//! `LUXO` optimizer-state sidecar files.
//!
//! Layout (little-endian): magic, version u32, update count u64, first-layer
//! d_out u32 and V u64 followed by m and v, layer count u32, then per dense
//! layer d_out u32, d_in u32, m and v. All moment buffers are f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AdamMoments, OptimizerState};
use crate::binio::{checked_len, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::model::Network;

pub const OPTIMIZER_MAGIC: &[u8; 4] = b"LUXO";

const MAX_VALUES: u64 = 1 << 34;

/// Writes the state alongside the network it belongs to; the network supplies
/// the shape so the reader can validate it.
pub fn write_optimizer_state_to<W: Write>(out: W, state: &OptimizerState, net: &Network<f32>) -> Result<W> {
    if !state.matches(net) {
        return Err(Error::DimensionMismatch("optimizer state does not match the network shape".into()));
    }
    let mut w = LeWriter::new(out);
    w.header(OPTIMIZER_MAGIC)?;
    w.u64(state.updates)?;
    w.u32(net.input.d_out as u32)?;
    w.u64(net.input.vocab_dim as u64)?;
    w.f32s(&state.input.m)?;
    w.f32s(&state.input.v)?;
    w.u32(net.layers.len() as u32)?;
    for (l, m) in net.layers.iter().zip(&state.layers) {
        w.u32(l.d_out as u32)?;
        w.u32(l.d_in as u32)?;
        w.f32s(&m.m)?;
        w.f32s(&m.v)?;
    }
    w.finish()
}

fn moments(r: &mut LeReader<impl Read>, count: usize) -> Result<AdamMoments> {
    Ok(AdamMoments { m: r.f32s(count)?, v: r.f32s(count)? })
}

/// Reads a state and checks it against `net`.
pub fn read_optimizer_state_from<R: Read>(input: R, net: &Network<f32>) -> Result<OptimizerState> {
    let mut r = LeReader::new(input, "optimizer state");
    r.header(OPTIMIZER_MAGIC)?;
    let updates = r.u64()?;
    let d0 = r.u32()? as usize;
    let v = checked_len("optimizer vocabulary", r.u64()?, MAX_VALUES)?;
    let mismatch = |what: String| Error::Corrupt(format!("optimizer state: {what}"));
    if d0 != net.input.d_out || v != net.input.vocab_dim {
        return Err(mismatch(format!(
            "first layer is {d0}×{v} but the network's is {}×{}",
            net.input.d_out, net.input.vocab_dim
        )));
    }
    let input = moments(&mut r, d0 * v)?;
    let count = r.u32()? as usize;
    if count != net.layers.len() {
        return Err(mismatch(format!("{count} dense layers but the network has {}", net.layers.len())));
    }
    let mut layers = Vec::with_capacity(count);
    for (k, l) in net.layers.iter().enumerate() {
        let (d_out, d_in) = (r.u32()? as usize, r.u32()? as usize);
        if (d_out, d_in) != (l.d_out, l.d_in) {
            return Err(mismatch(format!(
                "layer {} is {d_out}×{d_in} but the network's is {}×{}",
                k + 1,
                l.d_out,
                l.d_in
            )));
        }
        layers.push(moments(&mut r, d_out * d_in)?);
    }
    r.expect_eof()?;
    Ok(OptimizerState { updates, input, layers })
}

pub fn save_optimizer_state(path: impl AsRef<Path>, state: &OptimizerState, net: &Network<f32>) -> Result<()> {
    write_optimizer_state_to(BufWriter::new(File::create(path)?), state, net)?;
    Ok(())
}

pub fn load_optimizer_state(path: impl AsRef<Path>, net: &Network<f32>) -> Result<OptimizerState> {
    read_optimizer_state_from(BufReader::new(File::open(path)?), net)
}
