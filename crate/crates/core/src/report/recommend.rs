use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::prompts::StrategyId;

/// How costly a memorized output would be for the application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskTier {
    High,
    Medium,
    Low,
}

impl RiskTier {
    pub const ALL: [RiskTier; 3] = [RiskTier::High, RiskTier::Medium, RiskTier::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskTier::High => "high",
            RiskTier::Medium => "medium",
            RiskTier::Low => "low",
        }
    }
}

impl fmt::Display for RiskTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RiskTier::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown risk tier {s:?} (expected high, medium or low)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendationTable {
    pub version: u32,
    pub high: StrategyId,
    pub medium: StrategyId,
    pub low: StrategyId,
}

const TABLE_JSON: &str = include_str!("../../data/recommendations.v1.json");

pub fn recommendation_table() -> &'static RecommendationTable {
    static TABLE: OnceLock<RecommendationTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        serde_json::from_str(TABLE_JSON).expect("bundled recommendation table parses")
    })
}

pub fn recommend_strategy(tier: RiskTier) -> StrategyId {
    let t = recommendation_table();
    match tier {
        RiskTier::High => t.high,
        RiskTier::Medium => t.medium,
        RiskTier::Low => t.low,
    }
}
