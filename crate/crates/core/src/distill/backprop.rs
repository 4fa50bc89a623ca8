//! Backward pass through the layer stack for a batch of sparse inputs.

use rayon::prelude::*;

use super::loss::{distill_loss, KlDirection};
use crate::error::Result;
use crate::featurizer::SparseVector;
use crate::model::kernels::{dot, Real};
use crate::model::{Activation, ForwardCache, Network};

/// Gradients for every parameter touched by a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads<F> {
    /// First-layer columns in the batch's union support, ascending.
    pub columns: Vec<u32>,
    /// `columns.len() × d_0`, one contiguous gradient per listed column.
    pub input: Vec<F>,
    /// Row-major gradient for each dense layer after the first.
    pub layers: Vec<Vec<F>>,
}

impl<F: Real> NetworkGrads<F> {
    pub fn column(&self, slot: usize, d: usize) -> &[F] {
        &self.input[slot * d..(slot + 1) * d]
    }
}

/// Gradient through `a = act(z) / ‖act(z)‖` given `da`.
fn activation_backward<F: Real>(act: Activation, a: &[F], norm: F, da: &[F]) -> Vec<F> {
    if norm.to_f64().is_none_or(|n| n.is_nan() || n <= crate::model::kernels::NORM_EPSILON) {
        return vec![F::zero(); a.len()];
    }
    let proj = dot(a, da);
    a.iter()
        .zip(da)
        .map(|(&ai, &di)| {
            let dr = (di - ai * proj) / norm;
            match act {
                Activation::L2NormOnly => dr,
                Activation::ReluThenL2Norm if ai > F::zero() => dr,
                Activation::ReluThenL2Norm => F::zero(),
            }
        })
        .collect()
}

/// Pre-activation deltas for every layer of one document.
fn deltas<F: Real>(net: &Network<F>, cache: &ForwardCache<F>, d_embed: &[F]) -> Vec<Vec<F>> {
    let depth = net.layers.len() + 1;
    let mut out: Vec<Vec<F>> = vec![Vec::new(); depth];
    let mut da = d_embed.to_vec();
    for k in (0..depth).rev() {
        let act = if k == 0 { net.input.activation } else { net.layers[k - 1].activation };
        let dz = activation_backward(act, &cache.outputs[k], cache.norms[k], &da);
        if k > 0 {
            let l = &net.layers[k - 1];
            let mut prev = vec![F::zero(); l.d_in];
            for (row, &g) in l.weights.chunks_exact(l.d_in).zip(&dz) {
                if g != F::zero() {
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p = *p + g * w;
                    }
                }
            }
            da = prev;
        }
        out[k] = dz;
    }
    out
}

/// Backpropagates `d_embed` (row-major `batch × d_L`) through cached forward
/// passes. Accumulation over documents runs in batch order.
pub fn backward<F: Real>(
    net: &Network<F>,
    inputs: &[&SparseVector],
    caches: &[ForwardCache<F>],
    d_embed: &[F],
) -> NetworkGrads<F> {
    let d_last = net.output_dim();
    let all: Vec<Vec<Vec<F>>> =
        caches.par_iter().zip(d_embed.par_chunks_exact(d_last)).map(|(c, g)| deltas(net, c, g)).collect();

    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let mut g = vec![F::zero(); l.d_out * l.d_in];
            g.par_chunks_exact_mut(l.d_in).enumerate().for_each(|(o, row)| {
                for (b, cache) in caches.iter().enumerate() {
                    let delta = all[b][k + 1][o];
                    if delta != F::zero() {
                        for (r, &a) in row.iter_mut().zip(&cache.outputs[k]) {
                            *r = *r + delta * a;
                        }
                    }
                }
            });
            g
        })
        .collect();

    let mut columns: Vec<u32> = inputs.iter().flat_map(|s| s.indices().iter().copied()).collect();
    columns.sort_unstable();
    columns.dedup();
    let d0 = net.input.d_out;
    let mut input = vec![F::zero(); columns.len() * d0];
    for (s, delta) in inputs.iter().zip(&all) {
        for (i, w) in s.iter() {
            let slot = columns.binary_search(&(i as u32)).expect("column collected above");
            let w = F::from_f32(w).expect("f32 converts");
            for (g, &dz) in input[slot * d0..(slot + 1) * d0].iter_mut().zip(&delta[0]) {
                *g = *g + w * dz;
            }
        }
    }
    NetworkGrads { columns, input, layers }
}

/// Distillation loss of `net` on a batch and the gradient of every touched
/// parameter. `teacher` is row-major `batch × d_t`.
pub fn network_loss<F: Real>(
    net: &Network<F>,
    inputs: &[&SparseVector],
    teacher: &[F],
    d_t: usize,
    tau: F,
    direction: KlDirection,
) -> Result<(F, NetworkGrads<F>)> {
    let caches: Vec<ForwardCache<F>> = inputs.par_iter().map(|s| net.forward_cached(s)).collect();
    let d = net.output_dim();
    let student: Vec<F> = caches.iter().flat_map(|c| c.embedding().iter().copied()).collect();
    let (loss, d_embed) = distill_loss(&student, teacher, inputs.len(), d, d_t, tau, direction)?;
    Ok((loss, backward(net, inputs, &caches, &d_embed)))
}
