//! Generation, embedding and aesthetic-scoring backends.
//!
//! A backend is anything that can turn `(prompt, seed)` into an image, embed
//! images and text into one joint space, and score image aesthetics. Two
//! implementations ship: [`HttpBackend`] speaks the JSON wire protocol in
//! [`wire`], and [`MockBackend`] is a deterministic in-process stand-in with a
//! controllable memorization rate.

mod http;
pub mod images;
mod mock;
pub mod server;
pub mod wire;

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector::{normalize, EmbeddingVector};

pub use http::{HttpBackend, HttpOptions};
pub use mock::{MockBackend, MockCallCounts, MockModelConfig, MockSettings};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend timed out: {0}")]
    Timeout(String),
    #[error("generation rejected: {0}")]
    GenerationRejected(String),
    #[error("request rejected: {0}")]
    InvalidRequest(String),
    #[error("cannot decode payload: {0}")]
    Decode(String),
    #[error("input is empty")]
    EmptyInput,
    #[error("embedding has dimension {actual}, handshake announced {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Unavailable(_) | BackendError::Timeout(_)
        )
    }

    /// Short stable label stored with failed outcomes.
    pub fn label(&self) -> &'static str {
        match self {
            BackendError::Unavailable(_) => "backend_unavailable",
            BackendError::Timeout(_) => "timeout",
            BackendError::GenerationRejected(_) => "generation_rejected",
            BackendError::InvalidRequest(_) => "invalid_request",
            BackendError::Decode(_) => "decode_error",
            BackendError::EmptyInput => "empty_input",
            BackendError::DimensionMismatch { .. } => "dimension_mismatch",
            BackendError::Protocol(_) => "protocol_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub endpoint: Option<String>,
    pub embedding_dim: usize,
    pub model_label: String,
    pub deterministic: bool,
    /// Maximum concurrent calls, `None` when unrestricted.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_in_flight: Option<usize>,
}

/// Sampler settings sent with every generation request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub guidance: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            steps: 50,
            guidance: 7.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedImage {
    pub image_id: String,
    pub bytes: Vec<u8>,
    pub prompt_used: String,
    pub seed: u64,
}

impl GeneratedImage {
    /// Hex SHA-256 of the image bytes.
    pub fn content_digest(&self) -> String {
        images::content_digest(&self.bytes)
    }
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;
    fn generate(&self, prompt: &str, seed: u64) -> Result<GeneratedImage, BackendError>;
    fn embed_image(&self, image: &GeneratedImage) -> Result<EmbeddingVector, BackendError>;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError>;
    fn aesthetic_score(&self, image: &GeneratedImage) -> Result<f64, BackendError>;
}

/// Normalizes a raw embedding and checks it against the handshake dimension.
pub(crate) fn checked_embedding(
    expected_dim: usize,
    values: &[f64],
) -> Result<EmbeddingVector, BackendError> {
    if values.len() != expected_dim {
        return Err(BackendError::DimensionMismatch {
            expected: expected_dim,
            actual: values.len(),
        });
    }
    let v = EmbeddingVector::from_f64(values).map_err(|e| BackendError::Decode(e.to_string()))?;
    normalize(&v).map_err(|e| BackendError::Decode(e.to_string()))
}

/// Capped exponential backoff for retryable backend errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay: Duration,
    pub max_delay: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(10),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Retries without sleeping; for in-process backends and tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            multiplier: 1.0,
        }
    }

    /// Delay before attempt `attempt + 1`, for `attempt >= 1`.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        self.initial_delay.mul_f64(factor).min(self.max_delay)
    }

    pub fn call<T>(
        &self,
        mut f: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut attempt = 1;
        loop {
            match f() {
                Err(e) if e.is_retryable() && attempt < self.max_attempts.max(1) => {
                    log::debug!("retrying after attempt {attempt}: {e}");
                    thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
