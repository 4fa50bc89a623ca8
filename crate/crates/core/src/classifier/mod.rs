//! MLP quality scorer over frozen embeddings and top-fraction selection.

mod io;
pub mod metrics;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{load_scorer, read_scorer_from, save_scorer, write_scorer_to, SCORER_MAGIC};
pub use metrics::{auc, average_ranks, spearman};

use crate::corpus_io::{EmbeddingMatrix, Scores};
use crate::distill::schedule::{ceil_fraction, wsd_lr};
use crate::distill::{AdamConfig, AdamMoments};
use crate::error::{Error, Result};
use crate::model::kernels::dense_matvec;

/// Fully connected layer with bias, row-major `d_out × d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub d_out: usize,
    pub d_in: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DenseLayer {
    fn apply(&self, x: &[f32], y: &mut [f32]) {
        dense_matvec(&self.weights, self.d_out, self.d_in, x, y);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
    }
}

/// ReLU between layers; the last layer has width 1 and emits a logit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerMlp {
    pub layers: Vec<DenseLayer>,
}

pub fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy of `sigmoid(z)` against `y`.
fn bce_with_logit(z: f32, y: f32) -> f64 {
    let (z, y) = (f64::from(z), f64::from(y));
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl ScorerMlp {
    /// `d_in → hidden… → 1`, weights uniform in `±sqrt(6 / (d_in + d_out))`,
    /// biases zero.
    pub fn init(d_in: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let widths: Vec<usize> = std::iter::once(d_in).chain(hidden.iter().copied()).chain([1]).collect();
        if widths.contains(&0) {
            return Err(Error::Config(format!("scorer widths must be positive, got {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt() as f32;
                DenseLayer {
                    d_out: w[1],
                    d_in: w[0],
                    weights: (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn validate(&self) -> Result<()> {
        let last = self.layers.last().ok_or_else(|| Error::InvalidInput("scorer has no layers".into()))?;
        if last.d_out != 1 {
            return Err(Error::DimensionMismatch(format!("scorer output width is {}, expected 1", last.d_out)));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.d_in == 0 || l.weights.len() != l.d_out * l.d_in || l.bias.len() != l.d_out {
                return Err(Error::DimensionMismatch(format!(
                    "scorer layer {k} does not hold {}×{} weights",
                    l.d_out, l.d_in
                )));
            }
            if k > 0 && l.d_in != self.layers[k - 1].d_out {
                return Err(Error::DimensionMismatch(format!(
                    "scorer layer {k} has input width {} but layer {} outputs {}",
                    l.d_in,
                    k - 1,
                    self.layers[k - 1].d_out
                )));
            }
        }
        if self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias)).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite scorer weight".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in
    }

    fn check(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "embedding has dimension {} but the scorer expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Activations of every layer (post-ReLU for hidden layers, logit last).
    fn activations(&self, x: &[f32]) -> Vec<Vec<f32>> {
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; l.d_out];
            l.apply(acts.last().map_or(x, |v| v.as_slice()), &mut y);
            if k < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        acts
    }

    pub fn logit(&self, x: &[f32]) -> Result<f32> {
        self.check(x)?;
        Ok(self.activations(x).last().expect("non-empty")[0])
    }

    /// Score in (0, 1).
    pub fn score(&self, x: &[f32]) -> Result<f32> {
        Ok(sigmoid(self.logit(x)?))
    }

    pub fn score_batch(&self, embeddings: &EmbeddingMatrix) -> Result<Scores> {
        if embeddings.d() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "embeddings have dimension {} but the scorer expects {}",
                embeddings.d(),
                self.input_dim()
            )));
        }
        let scores: Vec<f32> = (0..embeddings.n())
            .into_par_iter()
            .map(|i| sigmoid(self.activations(embeddings.row(i)).last().expect("non-empty")[0]))
            .collect();
        Scores::new(embeddings.ids().to_vec(), scores)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub hidden: Vec<usize>,
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_frac: f64,
    pub decay_frac: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            lr: 1e-3,
            batch_size: 256,
            epochs: 10,
            warmup_frac: 0.0,
            decay_frac: 0.0,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScorerOutcome {
    pub scorer: ScorerMlp,
    /// Mean training BCE per epoch, measured during the epoch.
    pub epoch_losses: Vec<f32>,
}

/// Per-layer gradients, laid out like the layers.
struct Grads {
    weights: Vec<Vec<f32>>,
    bias: Vec<Vec<f32>>,
    loss: f64,
}

impl Grads {
    fn zeros(mlp: &ScorerMlp) -> Self {
        Self {
            weights: mlp.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: mlp.layers.iter().map(|l| vec![0.0; l.d_out]).collect(),
            loss: 0.0,
        }
    }

    fn add(&mut self, other: &Grads) {
        for (a, b) in self.weights.iter_mut().chain(self.bias.iter_mut()).zip(other.weights.iter().chain(&other.bias)) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.loss += other.loss;
    }
}

/// Gradient of `scale · Σ BCE` over the listed rows.
fn accumulate(mlp: &ScorerMlp, x: &EmbeddingMatrix, labels: &[f32], rows: &[usize], scale: f32) -> Grads {
    let mut g = Grads::zeros(mlp);
    for &i in rows {
        let input = x.row(i);
        let acts = mlp.activations(input);
        let z = acts.last().expect("non-empty")[0];
        g.loss += bce_with_logit(z, labels[i]);
        let mut delta = vec![(sigmoid(z) - labels[i]) * scale];
        for k in (0..mlp.layers.len()).rev() {
            let l = &mlp.layers[k];
            let prev = if k == 0 { input } else { &acts[k - 1] };
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    g.bias[k][o] += d;
                    for (gw, &p) in g.weights[k][o * l.d_in..(o + 1) * l.d_in].iter_mut().zip(prev) {
                        *gw += d * p;
                    }
                }
            }
            if k > 0 {
                let mut back = vec![0.0; l.d_in];
                for (row, &d) in l.weights.chunks_exact(l.d_in).zip(&delta) {
                    if d != 0.0 {
                        back.iter_mut().zip(row).for_each(|(b, &w)| *b += d * w);
                    }
                }
                // ReLU mask from the stored post-activation values.
                back.iter_mut().zip(&acts[k - 1]).for_each(|(b, &a)| {
                    if a <= 0.0 {
                        *b = 0.0;
                    }
                });
                delta = back;
            }
        }
    }
    g
}

/// Rows per parallel gradient chunk; chunk sums are combined in order so the
/// result does not depend on the thread count.
const GRAD_CHUNK: usize = 32;

/// Fits a scorer by minimizing mean BCE with Adam. Labels are soft targets in
/// `[0, 1]` aligned with the embedding rows, which are never modified.
pub fn train_scorer(embeddings: &EmbeddingMatrix, labels: &[f32], cfg: &ScorerConfig) -> Result<ScorerOutcome> {
    if labels.len() != embeddings.n() {
        return Err(Error::DimensionMismatch(format!("{} labels for {} embeddings", labels.len(), embeddings.n())));
    }
    if let Some(bad) = labels.iter().find(|y| !(0.0..=1.0).contains(*y)) {
        return Err(Error::InvalidInput(format!("label {bad} is outside [0, 1]")));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::InvalidInput("training labels must contain at least two distinct values".into()));
    }
    if cfg.batch_size == 0 || cfg.lr.is_nan() || cfg.lr < 0.0 {
        return Err(Error::Config(format!("invalid scorer config {cfg:?}")));
    }
    let mut mlp = ScorerMlp::init(embeddings.d(), &cfg.hidden, cfg.seed)?;
    let mut wm: Vec<AdamMoments> = mlp.layers.iter().map(|l| AdamMoments::zeros(l.weights.len())).collect();
    let mut bm: Vec<AdamMoments> = mlp.layers.iter().map(|l| AdamMoments::zeros(l.d_out)).collect();
    let n = embeddings.n();
    let total = (cfg.epochs * n.div_ceil(cfg.batch_size)) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5c0e);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f32;
            let parts: Vec<Grads> =
                batch.par_chunks(GRAD_CHUNK).map(|rows| accumulate(&mlp, embeddings, labels, rows, scale)).collect();
            let mut g = Grads::zeros(&mlp);
            parts.iter().for_each(|p| g.add(p));
            epoch_loss += g.loss;
            let lr = wsd_lr(step, total, cfg.lr, cfg.warmup_frac, cfg.decay_frac);
            step += 1;
            for (k, l) in mlp.layers.iter_mut().enumerate() {
                wm[k].step(&mut l.weights, &g.weights[k], lr, step, &cfg.adam);
                bm[k].step(&mut l.bias, &g.bias[k], lr, step, &cfg.adam);
            }
        }
        epoch_losses.push((epoch_loss / n as f64) as f32);
    }
    Ok(ScorerOutcome { scorer: mlp, epoch_losses })
}

/// The `⌈fraction · n⌉` highest-scoring ids, in descending score order with
/// ties broken by ascending id.
pub fn filter_top_fraction(scores: &Scores, fraction: f64) -> Result<Vec<String>> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no scores to filter".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must be in (0, 1], got {fraction}")));
    }
    if let Some(i) = scores.scores.iter().position(|s| s.is_nan()) {
        return Err(Error::InvalidInput(format!("score for {} is NaN", scores.ids[i])));
    }
    let k = (ceil_fraction(fraction, scores.len() as u64) as usize).clamp(1, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b].total_cmp(&scores.scores[a]).then_with(|| scores.ids[a].cmp(&scores.ids[b]))
    });
    Ok(order[..k].iter().map(|&i| scores.ids[i].clone()).collect())
}
