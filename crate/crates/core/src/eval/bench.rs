//! End-to-end throughput measurement, tokenization included.

use std::fmt::Write as _;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{sigmoid, ScorerMlp};
use crate::corpus_io::Document;
use crate::error::{Error, Result};
use crate::featurizer::SparseVector;
use crate::model::kernels::dense_matvec;
use crate::model::LexicalDenseModel;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    TokenizeOnly,
    Embed,
    EmbedAndScore,
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tokenize_only" | "tokenize-only" => Ok(Self::TokenizeOnly),
            "embed" => Ok(Self::Embed),
            "embed_and_score" | "embed-and-score" => Ok(Self::EmbedAndScore),
            _ => Err(Error::Config(format!("unknown bench mode {s:?} (tokenize_only, embed, embed_and_score)"))),
        }
    }
}

/// How the first layer is evaluated. `DenseReference` materializes each
/// sparse input as a length-V vector and multiplies by the full matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstLayerKernel {
    #[default]
    Sparse,
    DenseReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchOptions {
    pub mode: BenchMode,
    pub repeats: usize,
    pub kernel: FirstLayerKernel,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { mode: BenchMode::Embed, repeats: 3, kernel: FirstLayerKernel::Sparse }
    }
}

/// Seconds spent per stage in one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub tokenize: f64,
    pub featurize: f64,
    pub forward: f64,
    pub score: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.tokenize + self.featurize + self.forward + self.score
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub kernel: FirstLayerKernel,
    pub n_docs: usize,
    /// UTF-8 bytes of document text.
    pub bytes: usize,
    pub repeats: usize,
    /// Median wall time of the timed runs.
    pub wall_seconds: f64,
    pub docs_per_sec: f64,
    pub mib_per_sec: f64,
    /// Stage breakdown of the median run.
    pub stages: StageTimes,
    pub run_seconds: Vec<f64>,
}

impl BenchReport {
    pub fn csv_header() -> &'static str {
        "mode,kernel,n_docs,bytes,wall_seconds,docs_per_sec,mib_per_sec,tokenize_s,featurize_s,forward_s,score_s"
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::csv_header());
        let s = &self.stages;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            serde_json::to_value(self.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            serde_json::to_value(self.kernel).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            self.n_docs,
            self.bytes,
            self.wall_seconds,
            self.docs_per_sec,
            self.mib_per_sec,
            s.tokenize,
            s.featurize,
            s.forward,
            s.score
        )
        .expect("writing to a String");
        out
    }
}

/// First layer as a full dense product, then the remaining layers as usual.
pub struct DenseReference<'a> {
    model: &'a LexicalDenseModel,
    /// Row-major `d_0 × V`.
    rows: Vec<f32>,
}

impl<'a> DenseReference<'a> {
    pub fn new(model: &'a LexicalDenseModel) -> Self {
        Self { model, rows: model.network().input.to_row_major() }
    }

    pub fn forward(&self, s: &SparseVector) -> Vec<f32> {
        let net = self.model.network();
        let (d0, v) = (net.input.d_out, net.input.vocab_dim);
        let x = s.to_dense();
        let mut h = vec![0.0; d0];
        dense_matvec(&self.rows, d0, v, &x, &mut h);
        net.input.activation.apply(&mut h);
        for l in &net.layers {
            let mut next = vec![0.0; l.d_out];
            dense_matvec(&l.weights, l.d_out, l.d_in, &h, &mut next);
            l.activation.apply(&mut next);
            h = next;
        }
        h
    }

    pub fn forward_batch(&self, inputs: &[SparseVector]) -> Vec<f32> {
        inputs.par_iter().flat_map_iter(|s| self.forward(s)).collect()
    }
}

struct Pipeline<'a> {
    model: &'a LexicalDenseModel,
    tokenizer: &'a dyn Tokenizer,
    scorer: Option<&'a ScorerMlp>,
    dense: Option<DenseReference<'a>>,
    texts: Vec<&'a str>,
    mode: BenchMode,
}

impl Pipeline<'_> {
    fn run(&self) -> (f64, StageTimes) {
        let mut st = StageTimes::default();
        let start = Instant::now();
        let mut t = Instant::now();
        let tokens = self.tokenizer.tokenize_batch(&self.texts);
        st.tokenize = t.elapsed().as_secs_f64();
        if self.mode != BenchMode::TokenizeOnly {
            t = Instant::now();
            let inputs = self.model.featurizer().featurize_batch(&tokens);
            st.featurize = t.elapsed().as_secs_f64();
            t = Instant::now();
            let emb = match &self.dense {
                Some(d) => d.forward_batch(&inputs),
                None => self.model.forward_batch(&inputs),
            };
            st.forward = t.elapsed().as_secs_f64();
            if let (BenchMode::EmbedAndScore, Some(scorer)) = (self.mode, self.scorer) {
                t = Instant::now();
                let scores: Vec<f32> = emb
                    .par_chunks_exact(self.model.output_dim())
                    .map(|row| sigmoid(scorer.logit(row).expect("dimension checked")))
                    .collect();
                st.score = t.elapsed().as_secs_f64();
                black_box(scores);
            }
            black_box(emb);
        }
        black_box(tokens);
        (start.elapsed().as_secs_f64(), st)
    }
}

/// Runs the pipeline once untimed, then `repeats` timed runs, and reports the
/// median run.
pub fn throughput_bench(
    model: &LexicalDenseModel,
    tokenizer: &dyn Tokenizer,
    scorer: Option<&ScorerMlp>,
    docs: &[Document],
    opts: BenchOptions,
) -> Result<BenchReport> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    model.check_tokenizer(tokenizer)?;
    if opts.mode == BenchMode::EmbedAndScore {
        let s = scorer.ok_or_else(|| Error::Config("embed_and_score needs a scorer".into()))?;
        if s.input_dim() != model.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "scorer expects {} inputs but the model emits {}",
                s.input_dim(),
                model.output_dim()
            )));
        }
    }
    let repeats = opts.repeats.max(1);
    let pipeline = Pipeline {
        model,
        tokenizer,
        scorer,
        dense: (opts.kernel == FirstLayerKernel::DenseReference).then(|| DenseReference::new(model)),
        texts: docs.iter().map(|d| d.text.as_str()).collect(),
        mode: opts.mode,
    };
    pipeline.run();
    let mut runs: Vec<(f64, StageTimes)> = (0..repeats).map(|_| pipeline.run()).collect();
    let run_seconds = runs.iter().map(|r| r.0).collect();
    runs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (wall, stages) = runs[(repeats - 1) / 2];
    let bytes: usize = docs.iter().map(|d| d.text.len()).sum();
    Ok(BenchReport {
        mode: opts.mode,
        kernel: opts.kernel,
        n_docs: docs.len(),
        bytes,
        repeats,
        wall_seconds: wall,
        docs_per_sec: docs.len() as f64 / wall,
        mib_per_sec: bytes as f64 / (1024.0 * 1024.0) / wall,
        stages,
        run_seconds,
    })
}
