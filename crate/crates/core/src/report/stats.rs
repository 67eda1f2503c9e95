use std::collections::BTreeMap;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::audit::PromptAuditRecord;
use crate::prompts::StrategyId;

/// Variances at or below this are treated as zero.
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooShort(usize),
    #[error("a series is constant")]
    ConstantSeries,
}

/// Sample Pearson correlation, computed around the means for stability.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(StatsError::TooShort(n));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let dof = (n - 1) as f64;
    if sxx / dof <= VARIANCE_FLOOR || syy / dof <= VARIANCE_FLOOR {
        return Err(StatsError::ConstantSeries);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// A correlation coefficient, or the reason there is none.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub r: Option<f64>,
    pub reason: Option<String>,
}

impl Correlation {
    fn of(xs: &[f64], ys: &[f64]) -> Self {
        match pearson(xs, ys) {
            Ok(r) => Self {
                r: Some(r),
                reason: None,
            },
            Err(e) => Self {
                r: None,
                reason: Some(e.to_string()),
            },
        }
    }

    /// `r` rounded to two decimals.
    pub fn rounded(&self) -> Option<f64> {
        self.r.map(|r| (r * 100.0).round() / 100.0 + 0.0)
    }
}

impl Serialize for Correlation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Correlation", 3)?;
        st.serialize_field("r", &self.rounded())?;
        st.serialize_field("r_exact", &self.r)?;
        st.serialize_field("reason", &self.reason)?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub strategy: StrategyId,
    /// Prompts with at least one successful outcome.
    pub n: usize,
    pub r_aesthetic: Correlation,
    pub r_relevance: Correlation,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Per strategy, correlates each prompt's maximum similarity across seeds with
/// its mean aesthetic score and its mean relevance.
pub fn correlation_report(records: &[PromptAuditRecord]) -> Vec<CorrelationReport> {
    // strategy -> (max similarity, mean aesthetic, mean relevance) per prompt
    let mut by_strategy: BTreeMap<StrategyId, [Vec<f64>; 3]> = BTreeMap::new();
    for r in records {
        let Some(max) = r.max_similarity() else {
            continue;
        };
        let aes = mean(r.outcomes.iter().filter_map(|o| o.aesthetic));
        let rel = mean(r.outcomes.iter().filter_map(|o| o.relevance));
        let (Some(aes), Some(rel)) = (aes, rel) else {
            continue;
        };
        let e = by_strategy.entry(r.strategy).or_default();
        e[0].push(max);
        e[1].push(aes);
        e[2].push(rel);
    }
    by_strategy
        .into_iter()
        .map(|(strategy, [x, aes, rel])| CorrelationReport {
            strategy,
            n: x.len(),
            r_aesthetic: Correlation::of(&x, &aes),
            r_relevance: Correlation::of(&x, &rel),
        })
        .collect()
}
