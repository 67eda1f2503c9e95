use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, ErrorResponse};
use super::{
    checked_embedding, Backend, BackendDescriptor, BackendError, BackendKind, GeneratedImage,
    GenerationParams,
};
use crate::vector::EmbeddingVector;

#[derive(Debug, Clone)]
pub struct HttpOptions {
    /// Sent as `Authorization: Bearer <token>` when set.
    pub bearer_token: Option<String>,
    pub timeout: Duration,
    pub generation: GenerationParams,
    pub max_in_flight: usize,
}

impl Default for HttpOptions {
    fn default() -> Self {
        Self {
            bearer_token: None,
            timeout: Duration::from_secs(300),
            generation: GenerationParams::default(),
            max_in_flight: 4,
        }
    }
}

/// Client for a backend service speaking the [`wire`] protocol.
pub struct HttpBackend {
    client: Client,
    base: String,
    options: HttpOptions,
    descriptor: BackendDescriptor,
}

impl HttpBackend {
    /// Connects and performs the handshake.
    pub fn connect(endpoint: &str, options: HttpOptions) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        let base = endpoint.trim_end_matches('/').to_string();
        let mut backend = Self {
            client,
            base,
            options,
            descriptor: BackendDescriptor {
                kind: BackendKind::Http,
                endpoint: Some(endpoint.to_string()),
                embedding_dim: 0,
                model_label: String::new(),
                deterministic: false,
                max_in_flight: None,
            },
        };
        let hs: wire::HandshakeResponse = backend.post(wire::HANDSHAKE, &serde_json::json!({}))?;
        if hs.embedding_dim == 0 {
            return Err(BackendError::Protocol("handshake announced dim 0".into()));
        }
        backend.descriptor.embedding_dim = hs.embedding_dim;
        backend.descriptor.model_label = hs.model_label;
        backend.descriptor.deterministic = hs.deterministic;
        backend.descriptor.max_in_flight = Some(backend.options.max_in_flight.max(1));
        Ok(backend)
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        route: &str,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let mut req = self.client.post(format!("{}{route}", self.base)).json(body);
        if let Some(token) = &self.options.bearer_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(e.to_string())
            } else {
                BackendError::Unavailable(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.is_success() {
            return resp.json().map_err(|e| {
                if e.is_timeout() {
                    BackendError::Timeout(e.to_string())
                } else {
                    BackendError::Protocol(format!("{route}: {e}"))
                }
            });
        }
        let text = resp.text().unwrap_or_default();
        let message = serde_json::from_str::<ErrorResponse>(&text)
            .map(|e| e.error)
            .unwrap_or(text);
        Err(match status {
            StatusCode::SERVICE_UNAVAILABLE => BackendError::Unavailable(message),
            StatusCode::GATEWAY_TIMEOUT | StatusCode::REQUEST_TIMEOUT => {
                BackendError::Timeout(message)
            }
            StatusCode::UNPROCESSABLE_ENTITY => BackendError::GenerationRejected(message),
            s if s.is_server_error() => BackendError::Unavailable(format!("{s}: {message}")),
            s => BackendError::InvalidRequest(format!("{s}: {message}")),
        })
    }

    fn embedding(
        &self,
        route: &str,
        body: &impl Serialize,
    ) -> Result<EmbeddingVector, BackendError> {
        let resp: wire::EmbeddingResponse = self.post(route, body)?;
        checked_embedding(self.descriptor.embedding_dim, &resp.embedding)
    }
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<GeneratedImage, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let g = self.options.generation;
        let resp: wire::GenerateResponse = self.post(
            wire::GENERATE,
            &wire::GenerateRequest {
                prompt: prompt.to_string(),
                seed,
                width: g.width,
                height: g.height,
                steps: g.steps,
                guidance: g.guidance,
            },
        )?;
        let bytes = BASE64
            .decode(resp.image_b64.as_bytes())
            .map_err(|e| BackendError::Decode(e.to_string()))?;
        Ok(GeneratedImage {
            image_id: resp.image_id,
            bytes,
            prompt_used: prompt.to_string(),
            seed,
        })
    }

    fn embed_image(&self, image: &GeneratedImage) -> Result<EmbeddingVector, BackendError> {
        self.embedding(
            wire::EMBED_IMAGE,
            &wire::ImagePayload {
                image_b64: BASE64.encode(&image.bytes),
            },
        )
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        self.embedding(
            wire::EMBED_TEXT,
            &wire::EmbedTextRequest {
                text: text.to_string(),
            },
        )
    }

    fn aesthetic_score(&self, image: &GeneratedImage) -> Result<f64, BackendError> {
        let resp: wire::AestheticResponse = self.post(
            wire::AESTHETIC,
            &wire::ImagePayload {
                image_b64: BASE64.encode(&image.bytes),
            },
        )?;
        if !resp.score.is_finite() {
            return Err(BackendError::Protocol(
                "aesthetic score is not finite".into(),
            ));
        }
        Ok(resp.score)
    }
}
