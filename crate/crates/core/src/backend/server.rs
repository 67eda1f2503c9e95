//! Serves any [`Backend`] over the wire protocol.
//!
//! Used to expose the mock to out-of-process clients and as the fixture
//! server for the HTTP client tests.

use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::oneshot;

use super::wire::{self, ErrorResponse};
use super::{Backend, BackendError, GeneratedImage};

pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops, which only happens on an I/O error.
    pub fn join(mut self) -> std::io::Result<()> {
        self.wait()
    }

    /// Stops accepting, lets in-flight requests finish, then returns.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Err(e) = self.wait() {
            log::warn!("server stopped with an error: {e}");
        }
    }

    fn wait(&mut self) -> std::io::Result<()> {
        match self.thread.take().map(JoinHandle::join) {
            Some(Ok(res)) => res,
            Some(Err(_)) => Err(std::io::Error::other("server thread panicked")),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Clone)]
struct Shared {
    backend: Arc<dyn Backend>,
    token: Option<Arc<str>>,
}

/// Starts serving `backend` on `addr` (use port 0 for an ephemeral port).
///
/// `workers` bounds the threads running backend calls. Connections themselves
/// are async, so idle keep-alive clients never hold a worker.
pub fn serve(
    backend: Arc<dyn Backend>,
    addr: &str,
    workers: usize,
    required_token: Option<String>,
) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let workers = workers.max(1);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(workers.min(4))
        .max_blocking_threads(workers)
        .enable_io()
        .build()?;
    let shared = Shared {
        backend,
        token: required_token.map(Arc::from),
    };
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("memaudit-server".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                let app = Router::new().fallback(route).with_state(shared);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })?;
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

async fn route(
    State(shared): State<Shared>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let (status, body) = if method != Method::POST {
        error_reply(405, "only POST is supported")
    } else if !authorized(&headers, shared.token.as_deref()) {
        error_reply(401, "missing or invalid bearer token")
    } else {
        let path = uri.path().to_owned();
        let backend = Arc::clone(&shared.backend);
        tokio::task::spawn_blocking(move || dispatch(backend.as_ref(), &path, &body))
            .await
            .unwrap_or_else(|e| error_reply(500, format!("handler failed: {e}")))
    };
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

type Reply = (u16, Vec<u8>);

fn json_reply<T: Serialize>(status: u16, body: &T) -> Reply {
    (
        status,
        serde_json::to_vec(body).expect("response serializes"),
    )
}

fn error_reply(status: u16, message: impl Into<String>) -> Reply {
    json_reply(
        status,
        &ErrorResponse {
            error: message.into(),
        },
    )
}

fn backend_error(e: BackendError) -> Reply {
    let status = match e {
        BackendError::Unavailable(_) => 503,
        BackendError::Timeout(_) => 504,
        BackendError::GenerationRejected(_) => 422,
        BackendError::Protocol(_) => 500,
        BackendError::InvalidRequest(_)
        | BackendError::Decode(_)
        | BackendError::EmptyInput
        | BackendError::DimensionMismatch { .. } => 400,
    };
    error_reply(status, e.to_string())
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, Reply> {
    serde_json::from_slice(body).map_err(|e| error_reply(400, format!("invalid request: {e}")))
}

fn decode_image(b64: &str) -> Result<GeneratedImage, Reply> {
    let bytes = BASE64
        .decode(b64.as_bytes())
        .map_err(|e| error_reply(400, format!("invalid base64: {e}")))?;
    Ok(GeneratedImage {
        image_id: String::new(),
        bytes,
        prompt_used: String::new(),
        seed: 0,
    })
}

/// Dispatches one request body to the backend. Public so protocol fixtures can
/// be replayed without a socket.
pub fn dispatch(backend: &dyn Backend, route: &str, body: &[u8]) -> (u16, Vec<u8>) {
    route_request(backend, route, body).unwrap_or_else(|reply| reply)
}

fn route_request(backend: &dyn Backend, route: &str, body: &[u8]) -> Result<Reply, Reply> {
    match route {
        wire::HANDSHAKE => {
            let d = backend.descriptor();
            Ok(json_reply(
                200,
                &wire::HandshakeResponse {
                    model_label: d.model_label.clone(),
                    embedding_dim: d.embedding_dim,
                    deterministic: d.deterministic,
                },
            ))
        }
        wire::GENERATE => {
            let req: wire::GenerateRequest = parse(body)?;
            let image = backend
                .generate(&req.prompt, req.seed)
                .map_err(backend_error)?;
            Ok(json_reply(
                200,
                &wire::GenerateResponse {
                    image_id: image.image_id,
                    image_b64: BASE64.encode(&image.bytes),
                },
            ))
        }
        wire::EMBED_IMAGE => {
            let req: wire::ImagePayload = parse(body)?;
            let v = backend
                .embed_image(&decode_image(&req.image_b64)?)
                .map_err(backend_error)?;
            Ok(json_reply(200, &embedding_body(v.values())))
        }
        wire::EMBED_TEXT => {
            let req: wire::EmbedTextRequest = parse(body)?;
            let v = backend.embed_text(&req.text).map_err(backend_error)?;
            Ok(json_reply(200, &embedding_body(v.values())))
        }
        wire::AESTHETIC => {
            let req: wire::ImagePayload = parse(body)?;
            let score = backend
                .aesthetic_score(&decode_image(&req.image_b64)?)
                .map_err(backend_error)?;
            Ok(json_reply(200, &wire::AestheticResponse { score }))
        }
        other => Err(error_reply(404, format!("unknown route {other}"))),
    }
}

fn embedding_body(values: &[f32]) -> wire::EmbeddingResponse {
    wire::EmbeddingResponse {
        embedding: values.iter().map(|&v| f64::from(v)).collect(),
    }
}

fn authorized(headers: &HeaderMap, token: Option<&str>) -> bool {
    let Some(token) = token else { return true };
    let expected = format!("Bearer {token}");
    headers
        .get_all(header::AUTHORIZATION)
        .iter()
        .any(|v| v.as_bytes() == expected.as_bytes())
}
