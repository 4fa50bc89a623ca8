//! `luxkit` command-line pipeline.
//!
//! Exit status: 0 on success, 1 on a usage or configuration error, 2 when an
//! input file or corpus is bad.

mod config;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use luxkit::classifier::{filter_top_fraction, load_scorer, save_scorer, train_scorer};
use luxkit::corpus_io::{
    load_corpus, read_corpus, read_embeddings, read_scores, write_corpus, write_embeddings, write_scores,
};
use luxkit::distill::{save_optimizer_state, train, write_metrics_line};
use luxkit::eval::{evaluate_halves, throughput_bench, validate_ks, BenchMode, FirstLayerKernel};
use luxkit::model::{load_model, save_model, LexicalDenseModel};
use luxkit::synthetic::generate_topic_corpus;
use luxkit::vocab_miner::{mine_vocab, write_vocab, MiningConfig};
use serde::Deserialize;
use serde_json::json;

use config::{log_resolved, RunConfig};

/// A bad flag, flag value or config file.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(r: luxkit::Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| UsageError(e.to_string()).into())
}

#[derive(Parser)]
#[command(name = "luxkit", version, about = "Lexical-dense text embeddings: mine, train, embed, evaluate, filter")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [env: LUXKIT_WORKERS; default: all cores].
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic topic corpus and its teacher embeddings.
    Synth(SynthArgs),
    /// Mine the ngram vocabulary and write a freshly initialized model.
    MineVocab(MineArgs),
    /// Distill a model from teacher embeddings.
    Train(TrainArgs),
    /// Embed a corpus.
    Embed(EmbedArgs),
    /// Document-half matching error curve.
    EvalHalves(EvalArgs),
    /// Throughput benchmark.
    Bench(BenchArgs),
    /// Train a quality scorer on labelled embeddings.
    TrainClassifier(ClassifierArgs),
    /// Embed and score a corpus.
    Score(ScoreArgs),
    /// Print the ids of the top-scoring fraction.
    Filter(FilterArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_corpus: PathBuf,
    #[arg(long)]
    out_teacher: PathBuf,
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long)]
    topics: Option<usize>,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// `LUXV` vocabulary dump.
    #[arg(long)]
    out_vocab: PathBuf,
    /// `LUXM` model with seeded initial weights.
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    max_n: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    capacity: Option<usize>,
    /// Layer widths after the vocabulary, comma separated.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Read at most this many documents.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// `LUXE` teacher embeddings with one row per corpus id.
    #[arg(long)]
    teacher: PathBuf,
    /// Initial `LUXM` model.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-step NDJSON metrics.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// `LUXO` optimizer state after the last step.
    #[arg(long)]
    optimizer_out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    temperature: Option<f32>,
    #[arg(long)]
    peak_lr: Option<f32>,
    #[arg(long)]
    warmup_frac: Option<f64>,
    #[arg(long)]
    decay_frac: Option<f64>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Error curve as JSON.
    #[arg(long)]
    out: PathBuf,
    /// Error curve as `k,error` CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// `LUXC` scorer, required for embed_and_score.
    #[arg(long)]
    scorer: Option<PathBuf>,
    /// tokenize_only, embed or embed_and_score.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Use the dense first-layer reference instead of the sparse kernel.
    #[arg(long)]
    dense_reference: bool,
    /// JSON report; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifierArgs {
    /// `LUXE` embeddings.
    #[arg(long)]
    embeddings: PathBuf,
    /// NDJSON records `{"id": ..., "label": ...}` with labels in [0, 1].
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scorer: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    /// `LUXS` scores.
    #[arg(long)]
    scores: PathBuf,
    /// Fraction of documents to keep, in (0, 1].
    #[arg(long)]
    fraction: f64,
    /// Id list, one per line; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("luxkit: error: {e:#}");
            ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    cfg.apply_seed(cli.common.seed);
    cfg.apply_workers(cli.common.workers)?;
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting worker pool")?;
    }
    match cli.command {
        Command::Synth(a) => synth(a, cfg),
        Command::MineVocab(a) => mine(a, cfg),
        Command::Train(a) => train_cmd(a, cfg),
        Command::Embed(a) => embed(a, cfg),
        Command::EvalHalves(a) => eval_halves(a, cfg),
        Command::Bench(a) => bench(a, cfg),
        Command::TrainClassifier(a) => train_classifier(a, cfg),
        Command::Score(a) => score(a, cfg),
        Command::Filter(a) => filter(a, cfg),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn load_model_at(path: &Path) -> anyhow::Result<LexicalDenseModel> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_docs(path: &Path, limit: Option<usize>) -> anyhow::Result<Vec<luxkit::corpus_io::Document>> {
    load_corpus(path, limit).with_context(|| format!("reading corpus {}", path.display()))
}

fn synth(a: SynthArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    if let Some(n) = a.docs {
        cfg.synth.n_docs = n;
    }
    if let Some(t) = a.topics {
        cfg.synth.n_topics = t;
    }
    log_resolved(
        "synth",
        &json!({ "out_corpus": path_str(&a.out_corpus), "out_teacher": path_str(&a.out_teacher) }),
        &cfg,
    );
    let corpus = usage(generate_topic_corpus(&cfg.synth))?;
    write_corpus(&a.out_corpus, &corpus.docs)?;
    write_embeddings(&a.out_teacher, &corpus.teacher)?;
    eprintln!("luxkit: wrote {} documents", corpus.docs.len());
    Ok(())
}

fn mine(a: MineArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    let m = &mut cfg.mine;
    if let Some(v) = a.max_n {
        m.max_n = v;
    }
    if let Some(v) = a.vocab_size {
        m.vocab_size = v;
    }
    if a.capacity.is_some() {
        m.capacity = a.capacity;
    }
    if let Some(d) = a.dims {
        cfg.model.dims = d;
    }
    log_resolved(
        "mine-vocab",
        &json!({ "corpus": path_str(&a.corpus), "out_vocab": path_str(&a.out_vocab), "out_model": path_str(&a.out_model), "limit": a.limit }),
        &cfg,
    );
    let mut mining = MiningConfig::new(cfg.mine.max_n, cfg.mine.vocab_size);
    if let Some(c) = cfg.mine.capacity {
        mining.capacity = c;
    }
    if mining.max_n == 0 || mining.target_size == 0 || mining.capacity < mining.target_size {
        bail!(UsageError(format!("invalid mining settings {mining:?}")));
    }
    if cfg.model.dims.is_empty() || cfg.model.dims.contains(&0) {
        bail!(UsageError(format!("model dims must be positive, got {:?}", cfg.model.dims)));
    }
    let docs = read_corpus(&a.corpus, a.limit).with_context(|| format!("opening corpus {}", a.corpus.display()))?;
    let mined = mine_vocab(docs, &luxkit::tokenizer::SimpleTokenizer, mining)?;
    write_vocab(&a.out_vocab, &mined)?;
    let model = LexicalDenseModel::init(&mined, &cfg.model.dims, cfg.seed)?;
    save_model(&a.out_model, &model)?;
    eprintln!("luxkit: mined {} ngrams from {} occurrences", mined.vocab.len(), mined.total_ngrams);
    Ok(())
}

fn train_cmd(a: TrainArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.temperature {
        t.temperature = v;
    }
    if let Some(v) = a.peak_lr {
        t.peak_lr = v;
    }
    if let Some(v) = a.warmup_frac {
        t.warmup_frac = v;
    }
    if let Some(v) = a.decay_frac {
        t.decay_frac = v;
    }
    usage(cfg.train.validate())?;
    log_resolved(
        "train",
        &json!({
            "corpus": path_str(&a.corpus), "teacher": path_str(&a.teacher), "model": path_str(&a.model),
            "out": path_str(&a.out), "metrics": a.metrics.as_deref().map(path_str),
            "optimizer_out": a.optimizer_out.as_deref().map(path_str),
        }),
        &cfg,
    );
    let model = load_model_at(&a.model)?;
    let tokenizer = model.default_tokenizer()?;
    let docs = load_docs(&a.corpus, None)?;
    let teacher = read_embeddings(&a.teacher).with_context(|| format!("reading teacher {}", a.teacher.display()))?;
    let mut metrics_out = a.metrics.as_ref().map(|p| File::create(p).map(BufWriter::new)).transpose()?;
    let total = cfg.train.total_steps(docs.len());
    let mut sink_err = None;
    let outcome = train(model, tokenizer.as_ref(), &docs, &teacher, &cfg.train, |m| {
        if let Some(out) = metrics_out.as_mut() {
            if let Err(e) = write_metrics_line(out, m) {
                sink_err.get_or_insert(e);
            }
        }
        if (m.step + 1) % 50 == 0 || m.step + 1 == total {
            let loss = m.loss.map_or("skipped".to_string(), |l| format!("{l:.6}"));
            eprintln!("luxkit: step {}/{total} lr {:.2e} loss {loss}", m.step + 1, m.lr);
        }
    })?;
    if let Some(e) = sink_err {
        return Err(e.into());
    }
    if let Some(mut out) = metrics_out {
        out.flush()?;
    }
    save_model(&a.out, &outcome.model)?;
    if let Some(p) = &a.optimizer_out {
        save_optimizer_state(p, &outcome.optimizer, outcome.model.network())?;
    }
    Ok(())
}

fn embed(a: EmbedArgs, cfg: RunConfig) -> anyhow::Result<()> {
    log_resolved(
        "embed",
        &json!({ "model": path_str(&a.model), "corpus": path_str(&a.corpus), "out": path_str(&a.out) }),
        &cfg,
    );
    let model = load_model_at(&a.model)?;
    let tokenizer = model.default_tokenizer()?;
    let docs = load_docs(&a.corpus, None)?;
    let emb = model.embed_batch(tokenizer.as_ref(), &docs)?;
    write_embeddings(&a.out, &emb)?;
    Ok(())
}

fn eval_halves(a: EvalArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    if let Some(ks) = a.ks {
        cfg.eval.ks = ks;
    }
    usage(validate_ks(&cfg.eval.ks))?;
    log_resolved(
        "eval-halves",
        &json!({ "model": path_str(&a.model), "corpus": path_str(&a.corpus), "out": path_str(&a.out), "csv": a.csv.as_deref().map(path_str) }),
        &cfg,
    );
    let model = load_model_at(&a.model)?;
    let tokenizer = model.default_tokenizer()?;
    let docs = load_docs(&a.corpus, None)?;
    let curve = evaluate_halves(&model, tokenizer.as_ref(), &docs, &cfg.eval.ks)?;
    let mut out = BufWriter::new(File::create(&a.out)?);
    serde_json::to_writer_pretty(&mut out, &curve)?;
    out.write_all(b"\n")?;
    out.flush()?;
    if let Some(p) = &a.csv {
        std::fs::write(p, curve.to_csv())?;
    }
    Ok(())
}

fn bench(a: BenchArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    if let Some(m) = &a.mode {
        cfg.bench.mode = usage(m.parse::<BenchMode>())?;
    }
    if let Some(r) = a.repeats {
        cfg.bench.repeats = r;
    }
    if a.dense_reference {
        cfg.bench.kernel = FirstLayerKernel::DenseReference;
    }
    if cfg.bench.repeats == 0 {
        bail!(UsageError("repeats must be at least 1".into()));
    }
    if cfg.bench.mode == BenchMode::EmbedAndScore && a.scorer.is_none() {
        bail!(UsageError("embed_and_score needs --scorer".into()));
    }
    log_resolved(
        "bench",
        &json!({ "model": path_str(&a.model), "corpus": path_str(&a.corpus), "scorer": a.scorer.as_deref().map(path_str) }),
        &cfg,
    );
    let model = load_model_at(&a.model)?;
    let tokenizer = model.default_tokenizer()?;
    let scorer = a.scorer.as_ref().map(load_scorer).transpose()?;
    let docs = load_docs(&a.corpus, None)?;
    let report = throughput_bench(&model, tokenizer.as_ref(), scorer.as_ref(), &docs, cfg.bench)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Deserialize)]
struct LabelRecord {
    id: String,
    label: f32,
}

fn read_labels(path: &Path) -> anyhow::Result<HashMap<String, f32>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening labels {}", path.display()))?);
    let mut labels = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord =
            serde_json::from_str(&line).with_context(|| format!("labels line {}: malformed record", i + 1))?;
        if labels.insert(rec.id.clone(), rec.label).is_some() {
            bail!("labels line {}: duplicate id {:?}", i + 1, rec.id);
        }
    }
    Ok(labels)
}

fn train_classifier(a: ClassifierArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    let c = &mut cfg.classifier;
    if let Some(v) = a.hidden {
        c.hidden = v;
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if c.batch_size == 0 || c.lr.is_nan() || c.lr < 0.0 || c.hidden.contains(&0) {
        bail!(UsageError(format!("invalid classifier settings {c:?}")));
    }
    log_resolved(
        "train-classifier",
        &json!({ "embeddings": path_str(&a.embeddings), "labels": path_str(&a.labels), "out": path_str(&a.out) }),
        &cfg,
    );
    let emb =
        read_embeddings(&a.embeddings).with_context(|| format!("reading embeddings {}", a.embeddings.display()))?;
    let labels = read_labels(&a.labels)?;
    let index: HashMap<&str, usize> = emb.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    if let Some(missing) = labels.keys().find(|id| !index.contains_key(id.as_str())) {
        bail!("label for unknown id {missing:?}");
    }
    let rows: Vec<usize> = (0..emb.n()).filter(|&i| labels.contains_key(&emb.ids()[i])).collect();
    let y: Vec<f32> = rows.iter().map(|&i| labels[&emb.ids()[i]]).collect();
    let outcome = train_scorer(&emb.select(&rows), &y, &cfg.classifier)?;
    if let Some(last) = outcome.epoch_losses.last() {
        eprintln!("luxkit: {} labelled rows, final epoch loss {last:.6}", rows.len());
    }
    save_scorer(&a.out, &outcome.scorer)?;
    Ok(())
}

fn score(a: ScoreArgs, cfg: RunConfig) -> anyhow::Result<()> {
    log_resolved(
        "score",
        &json!({ "model": path_str(&a.model), "scorer": path_str(&a.scorer), "corpus": path_str(&a.corpus), "out": path_str(&a.out) }),
        &cfg,
    );
    let model = load_model_at(&a.model)?;
    let scorer = load_scorer(&a.scorer).with_context(|| format!("loading scorer {}", a.scorer.display()))?;
    let tokenizer = model.default_tokenizer()?;
    let docs = load_docs(&a.corpus, None)?;
    let emb = model.embed_batch(tokenizer.as_ref(), &docs)?;
    write_scores(&a.out, &scorer.score_batch(&emb)?)?;
    Ok(())
}

fn filter(a: FilterArgs, cfg: RunConfig) -> anyhow::Result<()> {
    if !(a.fraction > 0.0 && a.fraction <= 1.0) {
        bail!(UsageError(format!("--fraction must be in (0, 1], got {}", a.fraction)));
    }
    log_resolved(
        "filter",
        &json!({ "scores": path_str(&a.scores), "fraction": a.fraction, "out": a.out.as_deref().map(path_str) }),
        &cfg,
    );
    let scores = read_scores(&a.scores).with_context(|| format!("reading scores {}", a.scores.display()))?;
    let ids = filter_top_fraction(&scores, a.fraction)?;
    let mut text = String::new();
    for id in ids {
        text.push_str(&id);
        text.push('\n');
    }
    match &a.out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}
