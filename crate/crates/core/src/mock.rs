//! An in-process embedding server speaking the `/v1/embeddings` wire shape,
//! backed by [`HashingEncoder`]. Used by the examples and the test suites in
//! place of a real inference server.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::embed::HashingEncoder;
use crate::seed::stable_hash64;

#[derive(Debug, Clone)]
pub struct MockOptions {
    pub dim: usize,
    /// Each request sleeps for `hash(input) % max_latency`; zero disables.
    pub max_latency: Duration,
    /// Return `data` in reverse index order.
    pub reverse_data: bool,
    /// Answer the first N requests with 503.
    pub fail_first: usize,
    /// Multiply every returned vector by this factor.
    pub scale: f64,
}

impl Default for MockOptions {
    fn default() -> Self {
        Self {
            dim: 32,
            max_latency: Duration::ZERO,
            reverse_data: false,
            fail_first: 0,
            scale: 1.0,
        }
    }
}

struct MockState {
    opts: MockOptions,
    encoder: HashingEncoder,
    requests: AtomicUsize,
    inputs: AtomicUsize,
}

#[derive(Deserialize)]
struct Request {
    #[allow(dead_code)]
    model: String,
    input: Vec<String>,
}

async fn embeddings(
    State(state): State<Arc<MockState>>,
    Json(req): Json<Request>,
) -> impl IntoResponse {
    let n = state.requests.fetch_add(1, Ordering::SeqCst);
    if n < state.opts.fail_first {
        return (StatusCode::SERVICE_UNAVAILABLE, "warming up").into_response();
    }
    state.inputs.fetch_add(req.input.len(), Ordering::SeqCst);
    let max_ms = state.opts.max_latency.as_millis() as u64;
    if max_ms > 0 {
        let key = req.input.join("\n");
        let delay = stable_hash64(key.as_bytes()) % max_ms;
        tokio::time::sleep(Duration::from_millis(delay)).await;
    }
    let mut data: Vec<_> = req
        .input
        .iter()
        .enumerate()
        .map(|(index, text)| {
            let v: Vec<f64> = state
                .encoder
                .encode_one(text)
                .into_iter()
                .map(|x| x * state.opts.scale)
                .collect();
            json!({"object": "embedding", "index": index, "embedding": v})
        })
        .collect();
    if state.opts.reverse_data {
        data.reverse();
    }
    Json(json!({"object": "list", "data": data})).into_response()
}

/// A running mock server. Shuts down when dropped.
pub struct MockEmbeddingServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl MockEmbeddingServer {
    pub fn start(opts: MockOptions) -> std::io::Result<Self> {
        let state = Arc::new(MockState {
            encoder: HashingEncoder::new(opts.dim),
            opts,
            requests: AtomicUsize::new(0),
            inputs: AtomicUsize::new(0),
        });
        let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = Router::new()
            .route("/v1/embeddings", post(embeddings))
            .with_state(state.clone());
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("mock runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .expect("mock server");
            });
        });
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/embeddings", self.addr)
    }

    /// Requests received, including failed ones.
    pub fn requests(&self) -> usize {
        self.state.requests.load(Ordering::SeqCst)
    }

    /// Step strings embedded so far.
    pub fn inputs(&self) -> usize {
        self.state.inputs.load(Ordering::SeqCst)
    }

    /// The vector the server returns for `text`, before any scaling.
    pub fn expected(&self, text: &str) -> Vec<f64> {
        self.state.encoder.encode_one(text)
    }
}

impl Drop for MockEmbeddingServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
