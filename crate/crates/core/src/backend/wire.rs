//! JSON bodies of the backend HTTP protocol.
//!
//! | route               | request              | response            |
//! |---------------------|----------------------|---------------------|
//! | `/v1/handshake`     | `{}`                 | [`HandshakeResponse`] |
//! | `/v1/generate`      | [`GenerateRequest`]  | [`GenerateResponse`]  |
//! | `/v1/embed/image`   | [`ImagePayload`]     | [`EmbeddingResponse`] |
//! | `/v1/embed/text`    | [`EmbedTextRequest`] | [`EmbeddingResponse`] |
//! | `/v1/aesthetic`     | [`ImagePayload`]     | [`AestheticResponse`] |
//!
//! All routes are `POST`. Status 503 is retryable, 400 is a rejected request
//! and 422 a rejected generation.

use serde::{Deserialize, Serialize};

pub const HANDSHAKE: &str = "/v1/handshake";
pub const GENERATE: &str = "/v1/generate";
pub const EMBED_IMAGE: &str = "/v1/embed/image";
pub const EMBED_TEXT: &str = "/v1/embed/text";
pub const AESTHETIC: &str = "/v1/aesthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandshakeResponse {
    pub model_label: String,
    pub embedding_dim: usize,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub guidance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image_id: String,
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedTextRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AestheticResponse {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}
