//! Dense and sparse-by-dense kernels.
//!
//! Accumulation order is fixed: dot products use eight interleaved lanes
//! reduced pairwise, sparse products visit columns in ascending index order.
//! Results are therefore identical whether a row is computed alone or inside
//! a batch.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::featurizer::SparseVector;

/// Scalar type for kernels: `f32` for inference, `f64` for gradient checks.
pub trait Real: Float + FromPrimitive + Sum + Send + Sync + Debug + Default + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + Sum + Send + Sync + Debug + Default + 'static {}

/// Norms at or below this are treated as zero.
pub const NORM_EPSILON: f64 = 1e-12;

const LANES: usize = 8;

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: F = ca.remainder().iter().zip(cb.remainder()).fold(F::zero(), |s, (x, y)| s + *x * *y);
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out += alpha * x`.
#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], out: &mut [F]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o = *o + alpha * *v;
    }
}

/// `y = W x` with `W` row-major `d_out × d_in`.
pub fn dense_matvec<F: Real>(weights: &[F], d_out: usize, d_in: usize, x: &[F], y: &mut [F]) {
    debug_assert_eq!(weights.len(), d_out * d_in);
    debug_assert_eq!(x.len(), d_in);
    debug_assert_eq!(y.len(), d_out);
    for (o, row) in y.iter_mut().zip(weights.chunks_exact(d_in)) {
        *o = dot(row, x);
    }
}

/// Batched `y_b = W x_b`, weight-row outer so each row is loaded once per
/// block. Element results equal [`dense_matvec`] exactly.
pub fn dense_matvec_block<F: Real>(weights: &[F], d_out: usize, d_in: usize, xs: &[F], ys: &mut [F]) {
    let batch = xs.len() / d_in.max(1);
    debug_assert_eq!(xs.len(), batch * d_in);
    debug_assert_eq!(ys.len(), batch * d_out);
    for (o, row) in weights.chunks_exact(d_in).enumerate() {
        for b in 0..batch {
            ys[b * d_out + o] = dot(row, &xs[b * d_in..(b + 1) * d_in]);
        }
    }
}

/// `y = Σ_{i ∈ nz(s)} s_i · a_i` where column `a_i` is
/// `columns[i*d .. (i+1)*d]`. Only touched columns are read.
pub fn sparse_columns_matvec<F: Real>(columns: &[F], d: usize, s: &SparseVector, y: &mut [F]) {
    debug_assert_eq!(y.len(), d);
    y.iter_mut().for_each(|v| *v = F::zero());
    for (i, w) in s.iter() {
        let w = F::from_f32(w).expect("f32 converts");
        axpy(w, &columns[i * d..(i + 1) * d], y);
    }
}

pub fn norm<F: Real>(v: &[F]) -> F {
    dot(v, v).sqrt()
}

/// Scales `v` to unit length in place and returns the original norm. Vectors
/// with norm ≤ [`NORM_EPSILON`] become exactly zero.
pub fn l2_normalize_in_place<F: Real>(v: &mut [F]) -> F {
    let n = norm(v);
    if n.to_f64().unwrap_or(0.0) > NORM_EPSILON {
        v.iter_mut().for_each(|x| *x = *x / n);
    } else {
        v.iter_mut().for_each(|x| *x = F::zero());
    }
    n
}

pub fn l2_normalize<F: Real>(v: &[F]) -> Vec<F> {
    let mut out = v.to_vec();
    l2_normalize_in_place(&mut out);
    out
}

pub fn relu_in_place<F: Real>(v: &mut [F]) {
    v.iter_mut().for_each(|x| {
        if x.is_nan() || *x <= F::zero() {
            *x = F::zero();
        }
    });
}
