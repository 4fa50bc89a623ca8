//! The layer stack, generic over the scalar type so the trainer can run an
//! `f64` copy for gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{
    dense_matvec, dense_matvec_block, l2_normalize_in_place, relu_in_place, sparse_columns_matvec, Real,
};
use crate::error::{Error, Result};
use crate::featurizer::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    ReluThenL2Norm,
    L2NormOnly,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::ReluThenL2Norm => 0,
            Activation::L2NormOnly => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::ReluThenL2Norm),
            1 => Some(Activation::L2NormOnly),
            _ => None,
        }
    }

    /// Applies the activation in place and returns the pre-normalization norm.
    pub fn apply<F: Real>(self, v: &mut [F]) -> F {
        if self == Activation::ReluThenL2Norm {
            relu_in_place(v);
        }
        l2_normalize_in_place(v)
    }
}

/// First layer, stored column-major: column `i` (the weights fed by
/// vocabulary entry `i`) is contiguous so sparse inputs gather whole columns.
#[derive(Debug, Clone, PartialEq)]
pub struct InputLayer<F> {
    pub vocab_dim: usize,
    pub d_out: usize,
    pub activation: Activation,
    pub columns: Vec<F>,
}

impl<F: Real> InputLayer<F> {
    pub fn column(&self, i: usize) -> &[F] {
        &self.columns[i * self.d_out..(i + 1) * self.d_out]
    }

    /// Row-major `d_out × vocab_dim` copy, as stored on disk.
    pub fn to_row_major(&self) -> Vec<F> {
        let (v, d) = (self.vocab_dim, self.d_out);
        let mut out = vec![F::zero(); v * d];
        for i in 0..v {
            for k in 0..d {
                out[k * v + i] = self.columns[i * d + k];
            }
        }
        out
    }

    pub fn from_row_major(d_out: usize, vocab_dim: usize, activation: Activation, weights: &[F]) -> Self {
        let mut columns = vec![F::zero(); weights.len()];
        for k in 0..d_out {
            for i in 0..vocab_dim {
                columns[i * d_out + k] = weights[k * vocab_dim + i];
            }
        }
        Self { vocab_dim, d_out, activation, columns }
    }
}

/// Dense layer, row-major `d_out × d_in`. No bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<F> {
    pub d_out: usize,
    pub d_in: usize,
    pub activation: Activation,
    pub weights: Vec<F>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    /// Post-activation output of every layer; the last one is the embedding.
    pub outputs: Vec<Vec<F>>,
    /// Norm of each layer's pre-normalization vector.
    pub norms: Vec<F>,
}

impl<F> ForwardCache<F> {
    pub fn embedding(&self) -> &[F] {
        self.outputs.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    pub input: InputLayer<F>,
    pub layers: Vec<LayerWeights<F>>,
}

fn uniform_weights<F: Real>(rng: &mut ChaCha8Rng, count: usize, d_in: usize, d_out: usize) -> Vec<F> {
    let bound = (6.0 / (d_in + d_out) as f64).sqrt();
    (0..count).map(|_| F::from_f64(rng.random_range(-bound..bound)).expect("f64 converts")).collect()
}

impl<F: Real> Network<F> {
    /// Seeded init, uniform in `±sqrt(6 / (d_in + d_out))` per layer.
    /// `dims` lists output widths after the vocabulary, e.g. `[92, 3072, 3072, 192]`.
    pub fn init(vocab_dim: usize, dims: &[usize], seed: u64) -> Result<Self> {
        if vocab_dim == 0 || dims.is_empty() || dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive and non-empty (vocab {vocab_dim}, dims {dims:?})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = dims.len() - 1;
        let act = |k: usize| if k == last { Activation::L2NormOnly } else { Activation::ReluThenL2Norm };
        let input = InputLayer {
            vocab_dim,
            d_out: dims[0],
            activation: act(0),
            columns: uniform_weights(&mut rng, vocab_dim * dims[0], vocab_dim, dims[0]),
        };
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| LayerWeights {
                d_out: w[1],
                d_in: w[0],
                activation: act(k + 1),
                weights: uniform_weights(&mut rng, w[0] * w[1], w[0], w[1]),
            })
            .collect();
        Ok(Self { input, layers })
    }

    /// Checks the dimension chain and activation placement.
    pub fn validate(&self) -> Result<()> {
        let inp = &self.input;
        if inp.vocab_dim == 0 || inp.d_out == 0 || inp.columns.len() != inp.vocab_dim * inp.d_out {
            return Err(Error::DimensionMismatch(format!(
                "input layer {}×{} holds {} weights",
                inp.d_out,
                inp.vocab_dim,
                inp.columns.len()
            )));
        }
        let mut prev = inp.d_out;
        for (k, l) in self.layers.iter().enumerate() {
            if l.d_in != prev {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} expects input width {} but layer {} outputs {}",
                    k + 1,
                    l.d_in,
                    k,
                    prev
                )));
            }
            if l.d_out == 0 || l.weights.len() != l.d_out * l.d_in {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} is {}×{} but holds {} weights",
                    k + 1,
                    l.d_out,
                    l.d_in,
                    l.weights.len()
                )));
            }
            prev = l.d_out;
        }
        let acts: Vec<Activation> =
            std::iter::once(inp.activation).chain(self.layers.iter().map(|l| l.activation)).collect();
        let (last, hidden) = acts.split_last().expect("non-empty");
        if *last != Activation::L2NormOnly || hidden.iter().any(|a| *a != Activation::ReluThenL2Norm) {
            return Err(Error::InvalidInput(format!(
                "hidden layers must use relu+l2norm and the final layer l2norm only, found {acts:?}"
            )));
        }
        if self.parameters().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn vocab_dim(&self) -> usize {
        self.input.vocab_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input.d_out, |l| l.d_out)
    }

    /// Output widths of every layer, input layer first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input.d_out).chain(self.layers.iter().map(|l| l.d_out)).collect()
    }

    pub fn parameters(&self) -> impl Iterator<Item = F> + '_ {
        self.input.columns.iter().chain(self.layers.iter().flat_map(|l| l.weights.iter())).copied()
    }

    pub fn check_input(&self, s: &SparseVector) -> Result<()> {
        if s.dim() != self.vocab_dim() {
            return Err(Error::DimensionMismatch(format!(
                "sparse input has dim {} but the first layer expects {}",
                s.dim(),
                self.vocab_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, s: &SparseVector) -> Vec<F> {
        let mut h = vec![F::zero(); self.input.d_out];
        sparse_columns_matvec(&self.input.columns, self.input.d_out, s, &mut h);
        self.input.activation.apply(&mut h);
        for l in &self.layers {
            let mut next = vec![F::zero(); l.d_out];
            dense_matvec(&l.weights, l.d_out, l.d_in, &h, &mut next);
            l.activation.apply(&mut next);
            h = next;
        }
        h
    }

    /// Forward pass over a block of inputs, returned row-major. Each row is
    /// bitwise equal to [`forward`](Self::forward) on that input.
    pub fn forward_block(&self, inputs: &[SparseVector]) -> Vec<F> {
        let d0 = self.input.d_out;
        let mut h = vec![F::zero(); inputs.len() * d0];
        for (s, row) in inputs.iter().zip(h.chunks_exact_mut(d0)) {
            sparse_columns_matvec(&self.input.columns, d0, s, row);
            self.input.activation.apply(row);
        }
        for l in &self.layers {
            let mut next = vec![F::zero(); inputs.len() * l.d_out];
            dense_matvec_block(&l.weights, l.d_out, l.d_in, &h, &mut next);
            for row in next.chunks_exact_mut(l.d_out) {
                l.activation.apply(row);
            }
            h = next;
        }
        h
    }

    pub fn forward_cached(&self, s: &SparseVector) -> ForwardCache<F> {
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        let mut norms = Vec::with_capacity(self.layers.len() + 1);
        let mut h = vec![F::zero(); self.input.d_out];
        sparse_columns_matvec(&self.input.columns, self.input.d_out, s, &mut h);
        norms.push(self.input.activation.apply(&mut h));
        outputs.push(h);
        for l in &self.layers {
            let mut next = vec![F::zero(); l.d_out];
            dense_matvec(&l.weights, l.d_out, l.d_in, outputs.last().expect("previous layer"), &mut next);
            norms.push(l.activation.apply(&mut next));
            outputs.push(next);
        }
        ForwardCache { outputs, norms }
    }

    pub fn cast<G: Real>(&self) -> Network<G> {
        let conv = |v: &[F]| -> Vec<G> {
            v.iter().map(|x| G::from_f64(x.to_f64().expect("finite")).expect("converts")).collect()
        };
        Network {
            input: InputLayer {
                vocab_dim: self.input.vocab_dim,
                d_out: self.input.d_out,
                activation: self.input.activation,
                columns: conv(&self.input.columns),
            },
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    d_out: l.d_out,
                    d_in: l.d_in,
                    activation: l.activation,
                    weights: conv(&l.weights),
                })
                .collect(),
        }
    }
}
