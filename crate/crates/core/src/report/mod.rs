//! Aggregation of audit records into per-strategy frequencies, score
//! distributions, correlations and recommendations.

mod distribution;
mod emit;
mod recommend;
mod stats;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditConfig, PromptAuditRecord};
use crate::prompts::StrategyId;

pub use distribution::{
    distribution_data, Distribution, Metric, StrategyHistogram, FAVORABLE_AESTHETIC,
};
pub use emit::{
    config_digest, render_markdown, render_svg, summary_csv, write_report, ReportOptions,
    ReportPaths,
};
pub use recommend::{recommend_strategy, recommendation_table, RecommendationTable, RiskTier};
pub use stats::{correlation_report, pearson, Correlation, CorrelationReport, StatsError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("strategy {strategy} covers {found} captions, expected the {expected} seen across all strategies")]
    InconsistentCaptionSets {
        strategy: StrategyId,
        expected: usize,
        found: usize,
    },
    #[error("two records for caption {caption_id:?} under {strategy}")]
    DuplicateRecord {
        caption_id: String,
        strategy: StrategyId,
    },
    #[error("records include strategy {0}, which the run was not configured for")]
    UnexpectedStrategy(StrategyId),
    #[error("no {0} values to bin")]
    NoData(Metric),
    #[error("at least 2 bins are required, got {0}")]
    TooFewBins(usize),
    #[error("malformed run data: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One row of the per-strategy frequency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: StrategyId,
    pub captions: usize,
    pub seeds_per_run: u64,
    pub memorized_generations: usize,
    /// Percent of `captions * seeds_per_run`, two decimals.
    pub gen_frequency_pct: f64,
    /// Captions whose mean similarity is at least tau.
    pub high_mean_prompts: usize,
    /// Percent of `captions`, two decimals.
    pub prompt_frequency_pct: f64,
    /// Cells that failed and are excluded from the counts.
    pub failed_generations: usize,
}

/// `100 * num / den` rounded half-up to two decimals, exactly.
pub fn percent_2dp(num: usize, den: usize) -> f64 {
    if den == 0 {
        return 0.0;
    }
    let (num, den) = (num as u128, den as u128);
    let hundredths = (20_000 * num + den) / (2 * den);
    hundredths as f64 / 100.0
}

/// Builds one summary per configured strategy.
///
/// The generation denominator is `|captions| * seeds_per_run` for each
/// strategy on its own, not the total across strategies. A strategy without
/// records gets a zero row.
pub fn summarize(
    records: &[PromptAuditRecord],
    cfg: &AuditConfig,
) -> Result<Vec<StrategySummary>, ReportError> {
    let mut by_strategy: BTreeMap<StrategyId, Vec<&PromptAuditRecord>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in records {
        if !cfg.strategies.contains(&r.strategy) {
            return Err(ReportError::UnexpectedStrategy(r.strategy));
        }
        if !seen.insert((r.caption_id.as_str(), r.strategy)) {
            return Err(ReportError::DuplicateRecord {
                caption_id: r.caption_id.clone(),
                strategy: r.strategy,
            });
        }
        by_strategy.entry(r.strategy).or_default().push(r);
    }
    let captions: BTreeSet<&str> = records.iter().map(|r| r.caption_id.as_str()).collect();
    for (&strategy, rs) in &by_strategy {
        if rs.len() != captions.len() {
            return Err(ReportError::InconsistentCaptionSets {
                strategy,
                expected: captions.len(),
                found: rs.len(),
            });
        }
    }

    let n = captions.len();
    Ok(cfg
        .strategies
        .iter()
        .map(|&strategy| {
            let rs = by_strategy.get(&strategy).map_or(&[][..], |v| v.as_slice());
            let memorized: usize = rs.iter().map(|r| r.memorized_count_at(cfg.tau)).sum();
            let high_mean = rs
                .iter()
                .filter(|r| r.mean_similarity.is_some_and(|m| m >= cfg.tau))
                .count();
            let (captions, memorized_generations, high_mean_prompts) = if rs.is_empty() {
                (0, 0, 0)
            } else {
                (n, memorized, high_mean)
            };
            StrategySummary {
                strategy,
                captions,
                seeds_per_run: cfg.seeds_per_run,
                memorized_generations,
                gen_frequency_pct: percent_2dp(
                    memorized_generations,
                    captions * cfg.seeds_per_run as usize,
                ),
                high_mean_prompts,
                prompt_frequency_pct: percent_2dp(high_mean_prompts, captions),
                failed_generations: rs.iter().map(|r| r.failures.len()).sum(),
            }
        })
        .collect())
}
