use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::audit::PromptAuditRecord;
use crate::prompts::StrategyId;

/// Aesthetic scores above this are considered favorable.
pub const FAVORABLE_AESTHETIC: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Similarity,
    Relevance,
    Aesthetic,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Similarity, Metric::Relevance, Metric::Aesthetic];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Similarity => "similarity",
            Metric::Relevance => "relevance",
            Metric::Aesthetic => "aesthetic",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyHistogram {
    pub strategy: StrategyId,
    pub n: usize,
    pub counts: Vec<usize>,
    /// `counts / (n * bin_width)`, so the histogram integrates to 1.
    pub densities: Vec<f64>,
    pub mean: f64,
    /// Share of values above [`FAVORABLE_AESTHETIC`]; aesthetic only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub favorable_share: Option<f64>,
}

/// Histograms of one metric, all strategies on the same bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub metric: Metric,
    pub bins: usize,
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub strategies: Vec<StrategyHistogram>,
}

impl Distribution {
    pub fn bin_width(&self) -> f64 {
        (self.edges[self.bins] - self.edges[0]) / self.bins as f64
    }
}

fn value(o: &crate::audit::GenerationOutcome, metric: Metric) -> Option<f64> {
    match metric {
        Metric::Similarity => o.max_similarity,
        Metric::Relevance => o.relevance,
        Metric::Aesthetic => o.aesthetic,
    }
}

/// Bins every successful outcome's `metric` into `bins` equal-width bins
/// spanning the observed range across all strategies. If every value is the
/// same, the range is a unit interval centred on it.
pub fn distribution_data(
    records: &[PromptAuditRecord],
    metric: Metric,
    bins: usize,
) -> Result<Distribution, ReportError> {
    if bins < 2 {
        return Err(ReportError::TooFewBins(bins));
    }
    let mut values: BTreeMap<StrategyId, Vec<f64>> = BTreeMap::new();
    for r in records {
        let vs = r.outcomes.iter().filter_map(|o| value(o, metric));
        values.entry(r.strategy).or_default().extend(vs);
    }
    values.retain(|_, v| !v.is_empty());
    let all = values.values().flatten().copied();
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return Err(ReportError::NoData(metric));
    }
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();

    let strategies = values
        .into_iter()
        .map(|(strategy, vs)| {
            let mut counts = vec![0usize; bins];
            for &v in &vs {
                let i = (((v - lo) / width).floor() as usize).min(bins - 1);
                counts[i] += 1;
            }
            let n = vs.len();
            let densities = counts
                .iter()
                .map(|&c| c as f64 / (n as f64 * width))
                .collect();
            let favorable_share = (metric == Metric::Aesthetic)
                .then(|| vs.iter().filter(|&&v| v > FAVORABLE_AESTHETIC).count() as f64 / n as f64);
            StrategyHistogram {
                strategy,
                n,
                counts,
                densities,
                mean: vs.iter().sum::<f64>() / n as f64,
                favorable_share,
            }
        })
        .collect();
    Ok(Distribution {
        metric,
        bins,
        edges,
        strategies,
    })
}
