//! The two-phase audit: mine high-risk captions from a corpus sample, then
//! regenerate them under every strategy and seed and score each output.

mod checkpoint;
mod pipeline;
pub mod rundir;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::corpus::{CorpusError, CorpusIndex};
use crate::numfmt::{opt_six_dp, quantize, six_dp};
use crate::prompts::StrategyId;
use crate::vector::{cosine_similarity, top_k_similar, EmbeddingVector, VectorError};

pub use checkpoint::{read_checkpoint, CheckpointError};
pub use pipeline::{mine_high_risk, run_audit, MiningResult, RunOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("tau must be in (0, 1], got {0}")]
    Tau(f64),
    #[error("{name} must be at least 1")]
    NotPositive { name: &'static str },
    #[error("strategies must be nonempty")]
    NoStrategies,
    #[error("strategy {0} is listed twice")]
    DuplicateStrategy(StrategyId),
    #[error("failure ceiling must be in [0, 1], got {0}")]
    FailureCeiling(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_sample_n")]
    pub sample_n: usize,
    #[serde(default = "default_seeds_per_run")]
    pub seeds_per_run: u64,
    /// Baseline generations per sampled caption during mining.
    #[serde(default = "default_mining_seeds")]
    pub mining_seeds: u64,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyId>,
    #[serde(default)]
    pub rng_seed: u64,
    /// Largest tolerated fraction of failed cells before a run aborts.
    #[serde(default = "default_failure_ceiling")]
    pub failure_ceiling: f64,
}

fn default_tau() -> f64 {
    0.85
}
fn default_sample_n() -> usize {
    5000
}
fn default_seeds_per_run() -> u64 {
    75
}
fn default_mining_seeds() -> u64 {
    8
}
fn default_strategies() -> Vec<StrategyId> {
    StrategyId::ALL.to_vec()
}
fn default_failure_ceiling() -> f64 {
    0.10
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            sample_n: default_sample_n(),
            seeds_per_run: default_seeds_per_run(),
            mining_seeds: default_mining_seeds(),
            strategies: default_strategies(),
            rng_seed: 0,
            failure_ceiling: default_failure_ceiling(),
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(ConfigError::Tau(self.tau));
        }
        if self.sample_n == 0 {
            return Err(ConfigError::NotPositive { name: "sample_n" });
        }
        if self.seeds_per_run == 0 {
            return Err(ConfigError::NotPositive {
                name: "seeds_per_run",
            });
        }
        if self.mining_seeds == 0 {
            return Err(ConfigError::NotPositive {
                name: "mining_seeds",
            });
        }
        if self.strategies.is_empty() {
            return Err(ConfigError::NoStrategies);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.strategies.iter().find(|s| !seen.insert(**s)) {
            return Err(ConfigError::DuplicateStrategy(*dup));
        }
        if !(0.0..=1.0).contains(&self.failure_ceiling) {
            return Err(ConfigError::FailureCeiling(self.failure_ceiling));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("no captions to audit")]
    NoCaptions,
    #[error("caption id {0:?} is not in the corpus")]
    UnknownCaption(String),
    #[error("caption id {0:?} is listed twice")]
    DuplicateCaption(String),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("embedding: {0}")]
    Vector(#[from] VectorError),
    #[error("{failed} of {total} cells failed, above the ceiling of {ceiling}")]
    FailureCeiling {
        failed: usize,
        total: usize,
        ceiling: f64,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("run stopped after {completed} of {total} cells")]
    Interrupted { completed: usize, total: usize },
}

/// Scores of one generation against the corpus and its base prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredGeneration {
    pub max_similarity: f64,
    pub matched_record_id: String,
    pub relevance: f64,
    pub aesthetic: f64,
    pub memorized: bool,
}

/// Scores an image embedding. Scores are quantized to six decimals before
/// the inclusive `>= tau` test.
pub fn score_outcome(
    image_embedding: &EmbeddingVector,
    baseline_prompt_embedding: &EmbeddingVector,
    aesthetic: f64,
    corpus: &CorpusIndex,
    tau: f64,
) -> Result<ScoredGeneration, VectorError> {
    let best = top_k_similar(image_embedding, corpus.embeddings(), 1)?[0];
    let relevance = cosine_similarity(image_embedding, baseline_prompt_embedding)?;
    let max_similarity = quantize(best.score.value());
    Ok(ScoredGeneration {
        max_similarity,
        matched_record_id: corpus.records()[best.row].record_id.clone(),
        relevance: quantize(relevance.value()),
        aesthetic: quantize(aesthetic),
        memorized: max_similarity >= tau,
    })
}

/// One `(caption, strategy, seed)` cell. Failed cells carry no scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub caption_id: String,
    pub strategy: StrategyId,
    pub seed: u64,
    pub image_id: Option<String>,
    /// Content digest under `images/`.
    pub image_digest: Option<String>,
    #[serde(serialize_with = "opt_six_dp")]
    pub max_similarity: Option<f64>,
    pub matched_record_id: Option<String>,
    #[serde(serialize_with = "opt_six_dp")]
    pub relevance: Option<f64>,
    #[serde(serialize_with = "opt_six_dp")]
    pub aesthetic: Option<f64>,
    pub failed: bool,
    pub error: Option<String>,
}

impl GenerationOutcome {
    pub fn failure(
        caption_id: &str,
        strategy: StrategyId,
        seed: u64,
        error: &BackendError,
    ) -> Self {
        Self {
            caption_id: caption_id.to_string(),
            strategy,
            seed,
            image_id: None,
            image_digest: None,
            max_similarity: None,
            matched_record_id: None,
            relevance: None,
            aesthetic: None,
            failed: true,
            error: Some(error.label().to_string()),
        }
    }

    pub fn cell(&self) -> (&str, StrategyId, u64) {
        (&self.caption_id, self.strategy, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub seed: u64,
    pub error: String,
}

/// All outcomes of one caption under one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptAuditRecord {
    pub caption_id: String,
    pub strategy: StrategyId,
    #[serde(serialize_with = "six_dp")]
    pub tau: f64,
    /// Mean max-similarity over successful outcomes; `None` if all failed.
    #[serde(serialize_with = "opt_six_dp")]
    pub mean_similarity: Option<f64>,
    pub memorized_count: usize,
    pub outcomes: Vec<GenerationOutcome>,
    pub failures: Vec<CellFailure>,
}

impl PromptAuditRecord {
    pub fn similarities(&self) -> impl Iterator<Item = f64> + '_ {
        self.outcomes.iter().filter_map(|o| o.max_similarity)
    }

    pub fn memorized_count_at(&self, tau: f64) -> usize {
        self.similarities().filter(|&s| s >= tau).count()
    }

    pub fn max_similarity(&self) -> Option<f64> {
        self.similarities().reduce(f64::max)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Groups outcomes into records. Outcomes must be in canonical order
/// (caption, then strategy, then seed).
pub fn assemble_records(outcomes: &[GenerationOutcome], tau: f64) -> Vec<PromptAuditRecord> {
    let mut records: Vec<PromptAuditRecord> = Vec::new();
    for o in outcomes {
        let same = records
            .last()
            .is_some_and(|r| r.caption_id == o.caption_id && r.strategy == o.strategy);
        if !same {
            records.push(PromptAuditRecord {
                caption_id: o.caption_id.clone(),
                strategy: o.strategy,
                tau,
                mean_similarity: None,
                memorized_count: 0,
                outcomes: Vec::new(),
                failures: Vec::new(),
            });
        }
        let r = records.last_mut().expect("pushed above");
        if o.failed {
            r.failures.push(CellFailure {
                seed: o.seed,
                error: o.error.clone().unwrap_or_else(|| "unknown".into()),
            });
        } else {
            r.outcomes.push(o.clone());
        }
    }
    for r in &mut records {
        r.mean_similarity = mean(r.similarities()).map(quantize);
        r.memorized_count = r.memorized_count_at(tau);
    }
    records
}
