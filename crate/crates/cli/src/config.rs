//! Run configuration: an optional TOML file, overridden by command-line flags.
//!
//! ```toml
//! seed = 7
//! workers = 4
//!
//! [mine]
//! max_n = 2
//! vocab_size = 20000
//!
//! [model]
//! dims = [64, 64, 32]
//!
//! [train]
//! batch_size = 256
//! epochs = 3
//! ```
//!
//! The top-level `seed` is the only source of randomness; it replaces any
//! seed in a section.

use std::path::Path;

use anyhow::Context;
use luxkit::classifier::ScorerConfig;
use luxkit::distill::TrainConfig;
use luxkit::eval::{BenchOptions, DEFAULT_KS};
use luxkit::model::DEFAULT_DIMS;
use luxkit::synthetic::TopicCorpusConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineSection {
    pub max_n: usize,
    pub vocab_size: usize,
    /// Sketch capacity; four times `vocab_size` when absent.
    pub capacity: Option<usize>,
}

impl Default for MineSection {
    fn default() -> Self {
        Self { max_n: 5, vocab_size: 2_000_000, capacity: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dims: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { dims: DEFAULT_DIMS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { ks: DEFAULT_KS.to_vec() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; all logical cores when absent.
    pub workers: Option<usize>,
    pub mine: MineSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub classifier: ScorerConfig,
    pub eval: EvalSection,
    pub bench: BenchOptions,
    pub synth: TopicCorpusConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// Pushes the single seed into every section that consumes randomness.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        self.classifier.seed = self.seed;
        self.synth.seed = self.seed;
    }

    /// `--workers`, then the config file, then `LUXKIT_WORKERS`.
    pub fn apply_workers(&mut self, workers: Option<usize>) -> anyhow::Result<()> {
        if workers.is_some() {
            self.workers = workers;
        }
        if self.workers.is_none() {
            if let Ok(v) = std::env::var("LUXKIT_WORKERS") {
                let n = v
                    .trim()
                    .parse()
                    .map_err(|_| UsageError(format!("LUXKIT_WORKERS must be a positive integer, got {v:?}")))?;
                self.workers = Some(n);
            }
        }
        if self.workers == Some(0) {
            return Err(UsageError("workers must be at least 1".into()).into());
        }
        Ok(())
    }
}

/// One-line JSON record of a run: the subcommand, its inputs and the fully
/// resolved configuration.
pub fn log_resolved(command: &str, args: &serde_json::Value, cfg: &RunConfig) {
    let record = serde_json::json!({ "command": command, "args": args, "config": cfg });
    eprintln!("luxkit: resolved {record}");
}
