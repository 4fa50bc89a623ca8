//! Distillation of teacher batch-similarity structure into the lexical-dense
//! network.

pub mod adam;
pub mod backprop;
mod checkpoint;
pub mod loss;
pub mod schedule;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamMoments};
pub use backprop::{backward, network_loss, NetworkGrads};
pub use checkpoint::{
    load_optimizer_state, read_optimizer_state_from, save_optimizer_state, write_optimizer_state_to, OPTIMIZER_MAGIC,
};
pub use loss::{distill_loss, gram, gram_matrix, KlDirection};
pub use schedule::wsd_lr;

use crate::corpus_io::{Document, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::featurizer::SparseVector;
use crate::model::LexicalDenseModel;
use crate::model::{ForwardCache, Network};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub temperature: f32,
    pub peak_lr: f32,
    pub warmup_frac: f64,
    pub decay_frac: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub kl_direction: KlDirection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 3072,
            temperature: 3.0,
            peak_lr: 0.01,
            warmup_frac: 0.05,
            decay_frac: 0.10,
            epochs: 3,
            adam: AdamConfig::default(),
            seed: 0,
            kl_direction: KlDirection::TeacherToStudent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr must be non-negative, got {}", self.peak_lr));
        }
        let (w, d) = (self.warmup_frac, self.decay_frac);
        if !(0.0..=1.0).contains(&w) || !(0.0..=1.0).contains(&d) || w + d > 1.0 + 1e-12 {
            return bad(format!("warmup_frac {w} and decay_frac {d} must be in [0, 1] with sum ≤ 1"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps.is_nan() || a.eps <= 0.0 {
            return bad(format!("invalid Adam parameters {a:?}"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_docs: usize) -> u64 {
        n_docs.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n_docs: usize) -> u64 {
        self.epochs as u64 * self.steps_per_epoch(n_docs)
    }

    pub fn lr(&self, step: u64, total_steps: u64) -> f32 {
        wsd_lr(step, total_steps, self.peak_lr, self.warmup_frac, self.decay_frac)
    }
}

/// Adam moments for every parameter; first-layer moments are advanced only
/// for columns a batch touches.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Number of updates applied so far.
    pub updates: u64,
    pub input: AdamMoments,
    pub layers: Vec<AdamMoments>,
}

impl OptimizerState {
    pub fn new(net: &Network<f32>) -> Self {
        Self {
            updates: 0,
            input: AdamMoments::zeros(net.input.columns.len()),
            layers: net.layers.iter().map(|l| AdamMoments::zeros(l.weights.len())).collect(),
        }
    }

    pub fn matches(&self, net: &Network<f32>) -> bool {
        self.input.len() == net.input.columns.len()
            && self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(m, l)| m.len() == l.weights.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f32,
    /// `None` when the step was skipped for lack of usable documents.
    pub loss: Option<f32>,
    pub dropped: usize,
}

/// One update from pre-featurized inputs. Inputs with no features and rows
/// whose student or teacher embedding is zero are dropped before the loss.
#[allow(clippy::too_many_arguments)]
fn step_on(
    net: &mut Network<f32>,
    inputs: &[&SparseVector],
    teacher: &[&[f32]],
    d_t: usize,
    opt: &mut OptimizerState,
    step: u64,
    total_steps: u64,
    cfg: &TrainConfig,
) -> Result<StepMetrics> {
    let lr = cfg.lr(step, total_steps);
    let candidates: Vec<usize> =
        (0..inputs.len()).filter(|&i| !inputs[i].is_empty() && teacher[i].iter().any(|&v| v != 0.0)).collect();
    let caches: Vec<ForwardCache<f32>> = candidates.par_iter().map(|&i| net.forward_cached(inputs[i])).collect();
    let (kept, caches): (Vec<usize>, Vec<ForwardCache<f32>>) =
        candidates.into_iter().zip(caches).filter(|(_, c)| c.embedding().iter().any(|&v| v != 0.0)).unzip();
    let dropped = inputs.len() - kept.len();
    if kept.len() < 2 {
        return Ok(StepMetrics { step, lr, loss: None, dropped });
    }
    let d = net.output_dim();
    let student: Vec<f32> = caches.iter().flat_map(|c| c.embedding().iter().copied()).collect();
    let target: Vec<f32> = kept.iter().flat_map(|&i| teacher[i].iter().copied()).collect();
    let (loss, d_embed) = distill_loss(&student, &target, kept.len(), d, d_t, cfg.temperature, cfg.kl_direction)?;
    let kept_inputs: Vec<&SparseVector> = kept.iter().map(|&i| inputs[i]).collect();
    let grads = backward(net, &kept_inputs, &caches, &d_embed);
    apply_update(net, &grads, opt, lr, &cfg.adam);
    Ok(StepMetrics { step, lr, loss: Some(loss), dropped })
}

fn apply_update(net: &mut Network<f32>, g: &NetworkGrads<f32>, opt: &mut OptimizerState, lr: f32, adam: &AdamConfig) {
    opt.updates += 1;
    let t = opt.updates;
    let d0 = net.input.d_out;
    for (slot, &c) in g.columns.iter().enumerate() {
        let off = c as usize * d0;
        opt.input.step_slice(off, &mut net.input.columns[off..off + d0], g.column(slot, d0), lr, t, adam);
    }
    for ((layer, grad), moments) in net.layers.iter_mut().zip(&g.layers).zip(&mut opt.layers) {
        moments.step(&mut layer.weights, grad, lr, t, adam);
    }
}

/// One training step on a batch. `teacher` row `i` must belong to `docs[i]`.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut LexicalDenseModel,
    tokenizer: &dyn Tokenizer,
    docs: &[Document],
    teacher: &EmbeddingMatrix,
    opt: &mut OptimizerState,
    step: u64,
    total_steps: u64,
    cfg: &TrainConfig,
) -> Result<StepMetrics> {
    cfg.validate()?;
    model.check_tokenizer(tokenizer)?;
    if teacher.n() != docs.len() {
        return Err(Error::DimensionMismatch(format!("{} documents but {} teacher rows", docs.len(), teacher.n())));
    }
    if let Some(doc) = docs.iter().zip(teacher.ids()).find(|(d, id)| d.id != **id).map(|(d, _)| d) {
        return Err(Error::MissingTeacher(doc.id.clone()));
    }
    if !opt.matches(model.network()) {
        return Err(Error::DimensionMismatch("optimizer state does not match the network shape".into()));
    }
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let inputs = model.featurizer().featurize_batch(&tokenizer.tokenize_batch(&texts));
    let refs: Vec<&SparseVector> = inputs.iter().collect();
    let rows: Vec<&[f32]> = teacher.rows().collect();
    step_on(model.network_mut(), &refs, &rows, teacher.d(), opt, step, total_steps, cfg)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LexicalDenseModel,
    pub optimizer: OptimizerState,
    pub metrics: Vec<StepMetrics>,
}

/// Trains for `cfg.epochs` epochs, reshuffling the document order each epoch
/// from `cfg.seed`. `on_step` sees every step's metrics as they are produced.
pub fn train(
    mut model: LexicalDenseModel,
    tokenizer: &dyn Tokenizer,
    corpus: &[Document],
    teacher: &EmbeddingMatrix,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.check_tokenizer(tokenizer)?;
    let optimizer = OptimizerState::new(model.network());
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { model, optimizer, metrics: Vec::new() });
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut row_of: FxHashMap<&str, usize> = FxHashMap::default();
    for (i, id) in teacher.ids().iter().enumerate() {
        row_of.entry(id.as_str()).or_insert(i);
    }
    let teacher_rows: Vec<&[f32]> = corpus
        .iter()
        .map(|d| row_of.get(d.id.as_str()).map(|&i| teacher.row(i)).ok_or_else(|| Error::MissingTeacher(d.id.clone())))
        .collect::<Result<_>>()?;
    let texts: Vec<&str> = corpus.iter().map(|d| d.text.as_str()).collect();
    let inputs = model.featurizer().featurize_batch(&tokenizer.tokenize_batch(&texts));

    let mut optimizer = optimizer;
    let total = cfg.total_steps(corpus.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut metrics = Vec::with_capacity(total as usize);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&SparseVector> = batch.iter().map(|&i| &inputs[i]).collect();
            let rows: Vec<&[f32]> = batch.iter().map(|&i| teacher_rows[i]).collect();
            let m = step_on(model.network_mut(), &refs, &rows, teacher.d(), &mut optimizer, step, total, cfg)?;
            on_step(&m);
            metrics.push(m);
            step += 1;
        }
    }
    Ok(TrainOutcome { model, optimizer, metrics })
}

/// Trailing moving average of the recorded losses; skipped steps are ignored.
pub fn smoothed_losses(metrics: &[StepMetrics], window: usize) -> Vec<f32> {
    let losses: Vec<f64> = metrics.iter().filter_map(|m| m.loss).map(f64::from).collect();
    let window = window.max(1);
    (0..losses.len())
        .map(|i| {
            let tail = &losses[(i + 1).saturating_sub(window)..=i];
            (tail.iter().sum::<f64>() / tail.len() as f64) as f32
        })
        .collect()
}

pub fn write_metrics_line<W: Write>(out: &mut W, m: &StepMetrics) -> Result<()> {
    serde_json::to_writer(&mut *out, m).map_err(|e| Error::Io(e.into()))?;
    out.write_all(b"\n")?;
    Ok(())
}
