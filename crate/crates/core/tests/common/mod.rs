#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::Duration;

use memaudit::backend::{
    Backend, BackendDescriptor, BackendError, GeneratedImage, MockBackend, MockModelConfig,
    MockSettings,
};
use memaudit::corpus::{write_corpus, CorpusIndex};
use memaudit::prompts::StrategyId;
use memaudit::vector::EmbeddingVector;

pub const RATES: [(StrategyId, f64); 4] = [
    (StrategyId::Baseline, 0.414),
    (StrategyId::TaskInstruction, 0.204),
    (StrategyId::Negation, 0.348),
    (StrategyId::ChainOfThought, 0.096),
];

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_memaudit"))
}

pub fn run_cli(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env_remove("MEMAUDIT_TOKEN")
        .output()
        .expect("spawn memaudit")
}

pub struct CorpusFiles {
    pub manifest: PathBuf,
    pub store: PathBuf,
}

impl CorpusFiles {
    pub fn args(&self) -> Vec<String> {
        vec![
            "--corpus-manifest".into(),
            self.manifest.display().to_string(),
            "--corpus-store".into(),
            self.store.display().to_string(),
        ]
    }
}

pub fn write_synthetic(
    dir: &Path,
    rows: usize,
    dim: usize,
    seed: u64,
) -> (Arc<CorpusIndex>, CorpusFiles) {
    let corpus = CorpusIndex::synthetic(rows, dim, seed).unwrap();
    let files = CorpusFiles {
        manifest: dir.join("corpus.jsonl"),
        store: dir.join("corpus.membed"),
    };
    write_corpus(&corpus, &files.manifest, &files.store).unwrap();
    (Arc::new(corpus), files)
}

/// Mock settings with the four per-strategy rates and every id memorized.
pub fn strategy_rates(memorized: impl IntoIterator<Item = String>) -> MockSettings {
    MockSettings {
        memorized_caption_ids: memorized.into_iter().collect(),
        strategy_rates: RATES.into_iter().collect(),
        ..MockSettings::default()
    }
}

pub fn write_settings(dir: &Path, settings: &MockSettings) -> String {
    let path = dir.join("mock.json");
    std::fs::write(&path, serde_json::to_vec_pretty(settings).unwrap()).unwrap();
    format!("mock:{}", path.display())
}

pub fn mock(corpus: &Arc<CorpusIndex>, settings: MockSettings) -> MockBackend {
    MockBackend::new(MockModelConfig::new(Arc::clone(corpus), settings).unwrap())
}

/// `ceil(rate * seeds)` computed with integer arithmetic on the rate in
/// thousandths, independent of the mock's float handling.
pub fn ceil_rule(rate_thousandths: u64, seeds: u64) -> u64 {
    (rate_thousandths * seeds).div_ceil(1000)
}

/// Wraps a backend and sleeps before each generation.
pub struct Slow<B> {
    pub inner: B,
    pub delay: Duration,
}

impl<B: Backend> Backend for Slow<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }
    fn generate(&self, prompt: &str, seed: u64) -> Result<GeneratedImage, BackendError> {
        std::thread::sleep(self.delay);
        self.inner.generate(prompt, seed)
    }
    fn embed_image(&self, image: &GeneratedImage) -> Result<EmbeddingVector, BackendError> {
        self.inner.embed_image(image)
    }
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        self.inner.embed_text(text)
    }
    fn aesthetic_score(&self, image: &GeneratedImage) -> Result<f64, BackendError> {
        self.inner.aesthetic_score(image)
    }
}

/// Full sort of every row by `dot(q, row) / |q|`, ties by row index.
pub fn brute_force_ranking(query: &[f32], rows: &[f32], dim: usize) -> Vec<(usize, f64)> {
    let qn = query
        .iter()
        .map(|&x| f64::from(x).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut all: Vec<(usize, f64)> = rows
        .chunks(dim)
        .enumerate()
        .map(|(i, r)| {
            let mut d = 0.0;
            for j in 0..dim {
                d += f64::from(query[j]) * f64::from(r[j]);
            }
            (i, (d / qn).clamp(-1.0, 1.0))
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

/// Raw-sums formula for the sample correlation coefficient.
pub fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Memorized generation counts and high-mean prompt counts per strategy.
pub const REFERENCE_COUNTS: [(StrategyId, usize, usize); 4] = [
    (StrategyId::Baseline, 2082, 21),
    (StrategyId::TaskInstruction, 1026, 7),
    (StrategyId::Negation, 1751, 16),
    (StrategyId::ChainOfThought, 484, 1),
];
pub const REFERENCE_CAPTIONS: usize = 67;
pub const REFERENCE_SEEDS: u64 = 75;

fn scored(
    caption: &str,
    strategy: StrategyId,
    seed: u64,
    sim: f64,
) -> memaudit::audit::GenerationOutcome {
    memaudit::audit::GenerationOutcome {
        caption_id: caption.to_string(),
        strategy,
        seed,
        image_id: Some(format!("{caption}-{seed}")),
        image_digest: None,
        max_similarity: Some(sim),
        matched_record_id: Some(caption.to_string()),
        relevance: Some(0.3),
        aesthetic: Some(5.0 + sim),
        failed: false,
        error: None,
    }
}

/// Records whose counts are engineered to the table above.
///
/// The first `high` captions memorize on every seed (similarity 0.95). The
/// remaining memorized generations are spread evenly over the other captions
/// at 0.86, with 0.10 elsewhere, which keeps those captions' means below 0.85.
pub fn reference_records() -> Vec<memaudit::audit::PromptAuditRecord> {
    let seeds = REFERENCE_SEEDS as usize;
    let mut outcomes = Vec::new();
    let captions: Vec<String> = (0..REFERENCE_CAPTIONS)
        .map(|i| format!("cap-{i:03}"))
        .collect();
    for (ci, caption) in captions.iter().enumerate() {
        for (strategy, memorized, high) in REFERENCE_COUNTS {
            let rest = memorized - high * seeds;
            let others = REFERENCE_CAPTIONS - high;
            let hits = if ci < high {
                seeds
            } else {
                let j = ci - high;
                rest / others + usize::from(j < rest % others)
            };
            for seed in 0..seeds {
                let sim = match (ci < high, seed < hits) {
                    (true, _) => 0.95,
                    (false, true) => 0.86,
                    (false, false) => 0.10,
                };
                outcomes.push(scored(caption, strategy, seed as u64, sim));
            }
        }
    }
    outcomes.sort_by(|a, b| {
        (&a.caption_id, a.strategy, a.seed).cmp(&(&b.caption_id, b.strategy, b.seed))
    });
    memaudit::audit::assemble_records(&outcomes, 0.85)
}

/// Kills and reaps the child when dropped.
pub struct KillOnDrop(pub std::process::Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}
