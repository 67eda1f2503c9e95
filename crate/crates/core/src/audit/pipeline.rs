use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{read_checkpoint, CheckpointError, CheckpointWriter};
use super::{
    assemble_records, score_outcome, AuditConfig, AuditError, GenerationOutcome, PromptAuditRecord,
};
use crate::backend::images::ImageStore;
use crate::backend::{Backend, BackendError, RetryPolicy};
use crate::corpus::{sample_captions, CorpusIndex, CorpusRecord};
use crate::numfmt::quantize;
use crate::prompts::{render_prompt, StrategyId};
use crate::vector::{top_k_similar, EmbeddingVector, VectorError};

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Worker threads; capped by the backend's in-flight limit.
    pub concurrency: usize,
    pub retry: RetryPolicy,
    /// Cells per checkpoint flush.
    pub batch_size: usize,
    /// Where to keep generated images, if anywhere.
    pub images: Option<ImageStore>,
    /// Stop after computing this many new cells (simulated interruption).
    pub max_new_cells: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            concurrency: std::thread::available_parallelism().map_or(1, |n| n.get()),
            retry: RetryPolicy::default(),
            batch_size: 256,
            images: None,
            max_new_cells: None,
        }
    }
}

impl RunOptions {
    fn pool(&self, backend: &dyn Backend) -> rayon::ThreadPool {
        let limit = backend.descriptor().max_in_flight.unwrap_or(usize::MAX);
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.concurrency.clamp(1, limit.max(1)))
            .build()
            .expect("thread pool builds")
    }
}

fn check_dims(corpus: &CorpusIndex, backend: &dyn Backend) -> Result<(), AuditError> {
    let dim = backend.descriptor().embedding_dim;
    if dim != corpus.dim() {
        return Err(VectorError::DimensionMismatch {
            expected: corpus.dim(),
            actual: dim,
        }
        .into());
    }
    Ok(())
}

/// Output of the mining phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningResult {
    /// High-risk caption ids in corpus order.
    pub captions: Vec<String>,
    pub sampled: usize,
    pub mining_seeds: u64,
    pub tau: f64,
    pub rng_seed: u64,
    pub corpus_digest: String,
    /// Sampled captions whose every probe failed.
    pub excluded_failed: Vec<String>,
    pub probe_failures: usize,
    pub probes: usize,
}

enum Probe {
    Hit,
    Miss,
    AllFailed,
}

fn probe_caption(
    record: &CorpusRecord,
    corpus: &CorpusIndex,
    backend: &dyn Backend,
    cfg: &AuditConfig,
    retry: &RetryPolicy,
) -> Result<(Probe, usize, usize), AuditError> {
    let prompt =
        render_prompt(StrategyId::Baseline, &record.caption).expect("corpus captions are nonempty");
    let (mut probes, mut failures) = (0, 0);
    for seed in 0..cfg.mining_seeds {
        probes += 1;
        let embedded = retry
            .call(|| backend.generate(&prompt, seed))
            .and_then(|img| retry.call(|| backend.embed_image(&img)));
        match embedded {
            Ok(e) => {
                let best = top_k_similar(&e, corpus.embeddings(), 1)?[0];
                if quantize(best.score.value()) >= cfg.tau {
                    return Ok((Probe::Hit, probes, failures));
                }
            }
            Err(err) => {
                log::debug!("probe {} seed {seed} failed: {err}", record.record_id);
                failures += 1;
            }
        }
    }
    let verdict = if failures == probes {
        Probe::AllFailed
    } else {
        Probe::Miss
    };
    Ok((verdict, probes, failures))
}

/// Samples `cfg.sample_n` captions and keeps those for which at least one of
/// `cfg.mining_seeds` baseline generations reaches `tau` against the full
/// corpus.
pub fn mine_high_risk(
    corpus: &CorpusIndex,
    backend: &dyn Backend,
    cfg: &AuditConfig,
    opts: &RunOptions,
) -> Result<MiningResult, AuditError> {
    cfg.validate()?;
    check_dims(corpus, backend)?;
    let sample = sample_captions(corpus, cfg.sample_n, cfg.rng_seed)?;

    let verdicts: Vec<(Probe, usize, usize)> = opts.pool(backend).install(|| {
        sample
            .par_iter()
            .map(|r| probe_caption(r, corpus, backend, cfg, &opts.retry))
            .collect::<Result<_, _>>()
    })?;

    let probes: usize = verdicts.iter().map(|v| v.1).sum();
    let probe_failures: usize = verdicts.iter().map(|v| v.2).sum();
    if probe_failures as f64 > cfg.failure_ceiling * probes as f64 {
        return Err(AuditError::FailureCeiling {
            failed: probe_failures,
            total: probes,
            ceiling: cfg.failure_ceiling,
        });
    }

    let mut hits = Vec::new();
    let mut excluded_failed = Vec::new();
    for (record, (verdict, _, _)) in sample.iter().zip(&verdicts) {
        match verdict {
            Probe::Hit => hits.push(record.embedding_row),
            Probe::AllFailed => {
                log::warn!("excluding {}: every mining probe failed", record.record_id);
                excluded_failed.push(record.record_id.clone());
            }
            Probe::Miss => {}
        }
    }
    hits.sort_unstable();
    excluded_failed.sort_by_key(|id| corpus.position(id));

    Ok(MiningResult {
        captions: hits
            .into_iter()
            .map(|row| corpus.records()[row].record_id.clone())
            .collect(),
        sampled: sample.len(),
        mining_seeds: cfg.mining_seeds,
        tau: cfg.tau,
        rng_seed: cfg.rng_seed,
        corpus_digest: corpus.source_digest().to_string(),
        excluded_failed,
        probe_failures,
        probes,
    })
}

#[derive(Clone, Copy)]
struct Cell<'a> {
    record: &'a CorpusRecord,
    strategy: StrategyId,
    seed: u64,
}

impl Cell<'_> {
    fn key(&self) -> String {
        format!("{}/{}/{}", self.record.record_id, self.strategy, self.seed)
    }
}

struct CellContext<'a> {
    corpus: &'a CorpusIndex,
    backend: &'a dyn Backend,
    cfg: &'a AuditConfig,
    opts: &'a RunOptions,
    baseline: &'a HashMap<&'a str, Result<EmbeddingVector, BackendError>>,
}

impl CellContext<'_> {
    fn run(&self, cell: Cell<'_>) -> Result<GenerationOutcome, AuditError> {
        let id = cell.record.record_id.as_str();
        match self.try_run(cell) {
            Ok(o) => Ok(o),
            Err(CellError::Backend(e)) => {
                log::debug!("cell {} failed: {e}", cell.key());
                Ok(GenerationOutcome::failure(id, cell.strategy, cell.seed, &e))
            }
            Err(CellError::Fatal(e)) => Err(e),
        }
    }

    fn try_run(&self, cell: Cell<'_>) -> Result<GenerationOutcome, CellError> {
        let retry = &self.opts.retry;
        let backend = self.backend;
        let prompt = render_prompt(cell.strategy, &cell.record.caption)
            .expect("corpus captions are nonempty");
        let image = retry.call(|| backend.generate(&prompt, cell.seed))?;
        let embedding = retry.call(|| backend.embed_image(&image))?;
        let aesthetic = retry.call(|| backend.aesthetic_score(&image))?;
        let baseline = self.baseline[cell.record.record_id.as_str()]
            .as_ref()
            .map_err(|e| e.clone())?;
        let scored = score_outcome(&embedding, baseline, aesthetic, self.corpus, self.cfg.tau)
            .map_err(|e| CellError::Fatal(e.into()))?;
        let digest = match &self.opts.images {
            Some(store) => store
                .put(&image.bytes)
                .map_err(|e| CellError::Fatal(e.into()))?,
            None => image.content_digest(),
        };
        Ok(GenerationOutcome {
            caption_id: cell.record.record_id.clone(),
            strategy: cell.strategy,
            seed: cell.seed,
            image_id: Some(image.image_id),
            image_digest: Some(digest),
            max_similarity: Some(scored.max_similarity),
            matched_record_id: Some(scored.matched_record_id),
            relevance: Some(scored.relevance),
            aesthetic: Some(scored.aesthetic),
            failed: false,
            error: None,
        })
    }
}

enum CellError {
    Backend(BackendError),
    Fatal(AuditError),
}

impl From<BackendError> for CellError {
    fn from(e: BackendError) -> Self {
        CellError::Backend(e)
    }
}

/// Runs every `(caption, strategy, seed)` cell and returns one record per
/// `(caption, strategy)` in canonical order.
///
/// With a checkpoint path, completed cells are read back and skipped, and new
/// cells are appended batch by batch in canonical order, so a resumed run
/// produces the same records as an uninterrupted one.
pub fn run_audit(
    captions: &[String],
    corpus: &CorpusIndex,
    backend: &dyn Backend,
    cfg: &AuditConfig,
    checkpoint: Option<&Path>,
    opts: &RunOptions,
) -> Result<Vec<PromptAuditRecord>, AuditError> {
    cfg.validate()?;
    check_dims(corpus, backend)?;
    if captions.is_empty() {
        return Err(AuditError::NoCaptions);
    }
    let mut seen = HashSet::new();
    let records: Vec<&CorpusRecord> = captions
        .iter()
        .map(|id| {
            let r = corpus
                .get(id)
                .ok_or_else(|| AuditError::UnknownCaption(id.clone()))?;
            if !seen.insert(id.as_str()) {
                return Err(AuditError::DuplicateCaption(id.clone()));
            }
            Ok(r)
        })
        .collect::<Result<_, _>>()?;

    let cells: Vec<Cell> = records
        .iter()
        .flat_map(|&record| {
            cfg.strategies.iter().flat_map(move |&strategy| {
                (0..cfg.seeds_per_run).map(move |seed| Cell {
                    record,
                    strategy,
                    seed,
                })
            })
        })
        .collect();
    let total = cells.len();

    let (mut outcomes, valid_len) = match checkpoint {
        Some(path) => read_checkpoint(path)?,
        None => (Vec::new(), 0),
    };
    if outcomes.len() > total {
        return Err(CheckpointError::Mismatch {
            line: total,
            expected: "end of run".into(),
            found: format!("{} extra outcomes", outcomes.len() - total),
        }
        .into());
    }
    for (line, (o, cell)) in outcomes.iter().zip(&cells).enumerate() {
        let (caption, strategy, seed) = o.cell();
        if caption != cell.record.record_id || strategy != cell.strategy || seed != cell.seed {
            return Err(CheckpointError::Mismatch {
                line,
                expected: cell.key(),
                found: format!("{caption}/{strategy}/{seed}"),
            }
            .into());
        }
    }
    let mut failed = outcomes.iter().filter(|o| o.failed).count();
    if !outcomes.is_empty() {
        log::info!("resuming after {} of {total} cells", outcomes.len());
    }
    let mut writer = match checkpoint {
        Some(path) => Some(CheckpointWriter::open(path, valid_len)?),
        None => None,
    };

    let remaining = &cells[outcomes.len()..];
    let pool = opts.pool(backend);

    // One base-prompt embedding per caption, shared by all strategies.
    let mut needed: Vec<&CorpusRecord> = Vec::new();
    let mut needed_ids = HashSet::new();
    for c in remaining {
        if needed_ids.insert(c.record.record_id.as_str()) {
            needed.push(c.record);
        }
    }
    let baseline: HashMap<&str, Result<EmbeddingVector, BackendError>> = pool.install(|| {
        needed
            .par_iter()
            .map(|r| {
                let prompt = render_prompt(StrategyId::Baseline, &r.caption)
                    .expect("corpus captions are nonempty");
                (
                    r.record_id.as_str(),
                    opts.retry.call(|| backend.embed_text(&prompt)),
                )
            })
            .collect()
    });

    let ctx = CellContext {
        corpus,
        backend,
        cfg,
        opts,
        baseline: &baseline,
    };
    let budget = opts.max_new_cells.unwrap_or(usize::MAX);
    let mut computed = 0usize;
    for batch in remaining.chunks(opts.batch_size.max(1)) {
        if computed >= budget {
            return Err(AuditError::Interrupted {
                completed: outcomes.len(),
                total,
            });
        }
        let batch = &batch[..batch.len().min(budget - computed)];
        let fresh: Vec<GenerationOutcome> = pool.install(|| {
            batch
                .par_iter()
                .map(|&cell| ctx.run(cell))
                .collect::<Result<_, _>>()
        })?;
        if let Some(w) = writer.as_mut() {
            w.append(&fresh)?;
        }
        computed += fresh.len();
        failed += fresh.iter().filter(|o| o.failed).count();
        outcomes.extend(fresh);
        if failed as f64 > cfg.failure_ceiling * total as f64 {
            return Err(AuditError::FailureCeiling {
                failed,
                total,
                ceiling: cfg.failure_ceiling,
            });
        }
    }
    if outcomes.len() < total {
        return Err(AuditError::Interrupted {
            completed: outcomes.len(),
            total,
        });
    }
    Ok(assemble_records(&outcomes, cfg.tau))
}
