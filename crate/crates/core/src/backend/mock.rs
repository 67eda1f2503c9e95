//! Deterministic in-process backend with a memorization dial.
//!
//! The mock recognizes which built-in template rendered a prompt and looks the
//! caption up in the corpus. For a memorized caption under strategy `s`, the
//! first `ceil(rate(s) * seed_period)` seeds of every period reproduce the
//! paired training image exactly; every other generation is a noise image
//! whose embedding is a pseudo-random unit vector derived from
//! `sha256(prompt, seed, noise_seed)`.
//!
//! Text embeddings of a corpus caption (or of any built-in prompt wrapping
//! one) sit at cosine `text_coupling` from the caption's image embedding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendDescriptor, BackendError, BackendKind, GeneratedImage};
use crate::corpus::{CorpusIndex, CorpusRecord};
use crate::prompts::{match_builtin, StrategyId};
use crate::vector::{normalize_slice, EmbeddingVector};

const PAYLOAD_MAGIC: &str = "MOCKIMG1";

/// Serializable mock parameters (the `mock:<path>` config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSettings {
    #[serde(default)]
    pub memorized_caption_ids: BTreeSet<String>,
    #[serde(default)]
    pub memorization_rate: f64,
    /// Per-strategy factors applied to `memorization_rate`.
    #[serde(default = "default_multipliers")]
    pub strategy_multipliers: BTreeMap<StrategyId, f64>,
    /// Per-strategy rates that take precedence over rate * multiplier.
    #[serde(default)]
    pub strategy_rates: BTreeMap<StrategyId, f64>,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default = "default_seed_period")]
    pub seed_period: u64,
    #[serde(default = "default_memorized_aesthetic")]
    pub memorized_aesthetic: f64,
    #[serde(default = "default_noise_band")]
    pub noise_aesthetic_band: (f64, f64),
    #[serde(default = "default_text_coupling")]
    pub text_coupling: f64,
    #[serde(default = "default_model_label")]
    pub model_label: String,
    /// Seeds whose generations are refused as if by a safety filter.
    #[serde(default)]
    pub reject_seeds: BTreeSet<u64>,
    /// Number of leading `generate` attempts per `(prompt, seed)` that fail
    /// with a retryable error before the call succeeds.
    #[serde(default)]
    pub transient_failures: u32,
}

fn default_multipliers() -> BTreeMap<StrategyId, f64> {
    // Relative rates that reproduce the ordering
    // chain_of_thought < task_instruction < negation < baseline.
    BTreeMap::from([
        (StrategyId::Baseline, 1.0),
        (StrategyId::TaskInstruction, 0.204 / 0.414),
        (StrategyId::Negation, 0.348 / 0.414),
        (StrategyId::ChainOfThought, 0.096 / 0.414),
    ])
}

fn default_seed_period() -> u64 {
    75
}

fn default_memorized_aesthetic() -> f64 {
    6.25
}

fn default_noise_band() -> (f64, f64) {
    (4.5, 6.5)
}

fn default_text_coupling() -> f64 {
    0.95
}

fn default_model_label() -> String {
    "mock".to_string()
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            memorized_caption_ids: BTreeSet::new(),
            memorization_rate: 0.0,
            strategy_multipliers: default_multipliers(),
            strategy_rates: BTreeMap::new(),
            noise_seed: 0,
            seed_period: default_seed_period(),
            memorized_aesthetic: default_memorized_aesthetic(),
            noise_aesthetic_band: default_noise_band(),
            text_coupling: default_text_coupling(),
            model_label: default_model_label(),
            reject_seeds: BTreeSet::new(),
            transient_failures: 0,
        }
    }
}

impl MockSettings {
    pub fn effective_rate(&self, strategy: StrategyId) -> f64 {
        let rate = match self.strategy_rates.get(&strategy) {
            Some(&r) => r,
            None => {
                self.memorization_rate
                    * self
                        .strategy_multipliers
                        .get(&strategy)
                        .copied()
                        .unwrap_or(1.0)
            }
        };
        rate.clamp(0.0, 1.0)
    }

    /// `ceil(rate * seed_period)`, tolerant of representation error in the
    /// product (e.g. `0.2 * 75`).
    pub fn memorized_seeds(&self, strategy: StrategyId) -> u64 {
        let exact = self.effective_rate(strategy) * self.seed_period as f64;
        ((exact - 1e-9).ceil().max(0.0) as u64).min(self.seed_period)
    }
}

#[derive(Debug, Clone)]
pub struct MockModelConfig {
    pub corpus: Arc<CorpusIndex>,
    pub settings: MockSettings,
}

impl MockModelConfig {
    pub fn new(corpus: Arc<CorpusIndex>, settings: MockSettings) -> Result<Self, String> {
        let rates = std::iter::once(settings.memorization_rate)
            .chain(settings.strategy_rates.values().copied());
        for r in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("memorization rate {r} is outside [0, 1]"));
            }
        }
        if let Some(m) = settings
            .strategy_multipliers
            .values()
            .find(|m| !m.is_finite() || **m < 0.0)
        {
            return Err(format!(
                "strategy multiplier {m} must be finite and non-negative"
            ));
        }
        if let Some(id) = settings
            .memorized_caption_ids
            .iter()
            .find(|id| corpus.get(id).is_none())
        {
            return Err(format!("memorized caption id {id:?} is not in the corpus"));
        }
        if settings.seed_period == 0 {
            return Err("seed_period must be positive".into());
        }
        let (lo, hi) = settings.noise_aesthetic_band;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(format!("invalid aesthetic band [{lo}, {hi}]"));
        }
        if !(0.0..=1.0).contains(&settings.text_coupling) {
            return Err("text_coupling must be in [0, 1]".into());
        }
        Ok(Self { corpus, settings })
    }
}

/// Number of calls made to each mock operation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MockCallCounts {
    pub generate: u64,
    pub embed_image: u64,
    pub embed_text: u64,
    pub aesthetic: u64,
}

#[derive(Default)]
struct Counters {
    generate: AtomicU64,
    embed_image: AtomicU64,
    embed_text: AtomicU64,
    aesthetic: AtomicU64,
}

enum Payload {
    Memorized(String),
    Noise([u8; 32]),
}

pub struct MockBackend {
    config: MockModelConfig,
    descriptor: BackendDescriptor,
    counters: Counters,
    attempts: Mutex<HashMap<(String, u64), u32>>,
}

impl MockBackend {
    pub fn new(config: MockModelConfig) -> Self {
        let descriptor = BackendDescriptor {
            kind: BackendKind::Mock,
            endpoint: None,
            embedding_dim: config.corpus.dim(),
            model_label: config.settings.model_label.clone(),
            deterministic: true,
            max_in_flight: None,
        };
        Self {
            config,
            descriptor,
            counters: Counters::default(),
            attempts: Mutex::new(HashMap::new()),
        }
    }

    pub fn settings(&self) -> &MockSettings {
        &self.config.settings
    }

    pub fn corpus(&self) -> &CorpusIndex {
        &self.config.corpus
    }

    pub fn calls(&self) -> MockCallCounts {
        MockCallCounts {
            generate: self.counters.generate.load(Ordering::Relaxed),
            embed_image: self.counters.embed_image.load(Ordering::Relaxed),
            embed_text: self.counters.embed_text.load(Ordering::Relaxed),
            aesthetic: self.counters.aesthetic.load(Ordering::Relaxed),
        }
    }

    fn hash(&self, parts: &[&[u8]]) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        h.update(self.config.settings.noise_seed.to_le_bytes());
        h.finalize().into()
    }

    fn unit_vector(&self, seed: [u8; 32]) -> Vec<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::from_seed(seed);
        let raw: Vec<f32> = (0..self.descriptor.embedding_dim)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x as f32
            })
            .collect();
        normalize_slice(&raw).expect("gaussian sample is nonzero")
    }

    /// Resolves a prompt to the corpus record it was built from, if any.
    fn resolve(&self, prompt: &str) -> Option<(StrategyId, &CorpusRecord)> {
        let (strategy, caption) = match match_builtin(prompt) {
            Some((s, c)) => (s, c),
            None => (StrategyId::Baseline, prompt.trim()),
        };
        self.config
            .corpus
            .find_by_caption(caption)
            .map(|r| (strategy, r))
    }

    fn reproduces_training_image(&self, prompt: &str, seed: u64) -> Option<&CorpusRecord> {
        let s = &self.config.settings;
        let (strategy, record) = self.resolve(prompt)?;
        if !s.memorized_caption_ids.contains(&record.record_id) {
            return None;
        }
        (seed % s.seed_period < s.memorized_seeds(strategy)).then_some(record)
    }

    fn decode(&self, image: &GeneratedImage) -> Result<Payload, BackendError> {
        let text = std::str::from_utf8(&image.bytes)
            .map_err(|_| BackendError::Decode("mock image is not UTF-8".into()))?;
        let mut lines = text.lines();
        if lines.next() != Some(PAYLOAD_MAGIC) {
            return Err(BackendError::Decode("not a mock image".into()));
        }
        match (lines.next(), lines.next()) {
            (Some("memorized"), Some(id)) => {
                if self.config.corpus.get(id).is_none() {
                    return Err(BackendError::Decode(format!("unknown record {id:?}")));
                }
                Ok(Payload::Memorized(id.to_string()))
            }
            (Some("noise"), Some(h)) => {
                let mut seed = [0u8; 32];
                hex::decode_to_slice(h, &mut seed)
                    .map_err(|e| BackendError::Decode(e.to_string()))?;
                Ok(Payload::Noise(seed))
            }
            _ => Err(BackendError::Decode("malformed mock image".into())),
        }
    }
}

impl Backend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<GeneratedImage, BackendError> {
        self.counters.generate.fetch_add(1, Ordering::Relaxed);
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let s = &self.config.settings;
        if s.transient_failures > 0 {
            let mut attempts = self.attempts.lock().expect("attempt map poisoned");
            let n = attempts.entry((prompt.to_string(), seed)).or_insert(0);
            if *n < s.transient_failures {
                *n += 1;
                return Err(BackendError::Unavailable("mock transient failure".into()));
            }
        }
        if s.reject_seeds.contains(&seed) {
            return Err(BackendError::GenerationRejected(format!(
                "mock rejects seed {seed}"
            )));
        }
        let key = self.hash(&[b"generate", prompt.as_bytes(), &seed.to_le_bytes()]);
        let body = match self.reproduces_training_image(prompt, seed) {
            Some(record) => format!("{PAYLOAD_MAGIC}\nmemorized\n{}\n", record.record_id),
            None => format!("{PAYLOAD_MAGIC}\nnoise\n{}\n", hex::encode(key)),
        };
        Ok(GeneratedImage {
            image_id: hex::encode(&key[..16]),
            bytes: body.into_bytes(),
            prompt_used: prompt.to_string(),
            seed,
        })
    }

    fn embed_image(&self, image: &GeneratedImage) -> Result<EmbeddingVector, BackendError> {
        self.counters.embed_image.fetch_add(1, Ordering::Relaxed);
        match self.decode(image)? {
            Payload::Memorized(id) => {
                let record = self.config.corpus.get(&id).expect("checked in decode");
                Ok(self.config.corpus.embedding_of(record))
            }
            Payload::Noise(seed) => Ok(EmbeddingVector::new_normalized(self.unit_vector(seed))
                .expect("normalized by construction")),
        }
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        self.counters.embed_text.fetch_add(1, Ordering::Relaxed);
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let noise = self.unit_vector(self.hash(&[b"text", text.as_bytes()]));
        let Some((_, record)) = self.resolve(text) else {
            return Ok(EmbeddingVector::new_normalized(noise).expect("normalized by construction"));
        };
        // Mix the image embedding with the part of the noise orthogonal to it.
        let image = self.config.corpus.embeddings().row(record.embedding_row);
        let along: f64 = image
            .iter()
            .zip(&noise)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum();
        let ortho: Vec<f32> = image
            .iter()
            .zip(&noise)
            .map(|(&a, &b)| (f64::from(b) - along * f64::from(a)) as f32)
            .collect();
        let c = self.config.settings.text_coupling;
        let mixed: Vec<f32> = match normalize_slice(&ortho) {
            Ok(ortho) => image
                .iter()
                .zip(&ortho)
                .map(|(&a, &o)| (c * f64::from(a) + (1.0 - c * c).sqrt() * f64::from(o)) as f32)
                .collect(),
            Err(_) => image.to_vec(),
        };
        let unit = normalize_slice(&mixed).map_err(|e| BackendError::Decode(e.to_string()))?;
        Ok(EmbeddingVector::new_normalized(unit).expect("normalized by construction"))
    }

    fn aesthetic_score(&self, image: &GeneratedImage) -> Result<f64, BackendError> {
        self.counters.aesthetic.fetch_add(1, Ordering::Relaxed);
        let s = &self.config.settings;
        match self.decode(image)? {
            Payload::Memorized(_) => Ok(s.memorized_aesthetic),
            Payload::Noise(seed) => {
                let h = Sha256::digest([b"aesthetic".as_slice(), &seed].concat());
                let u = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) as f64
                    / (u64::MAX as f64 + 1.0);
                let (lo, hi) = s.noise_aesthetic_band;
                Ok(lo + (hi - lo) * u)
            }
        }
    }
}
