//! HTTP scoring service for RL training loops.
//!
//! * `POST /v1/score` scores a group of rollouts in one call.
//! * `GET /healthz` reports liveness and embedder reachability.
//! * `GET /v1/metrics` exposes counters in the Prometheus text format.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::embed::{EmbedderConfig, HttpEmbedder};
use crate::pipeline::{
    ErrorCode, ErrorRecord, ItemError, ScoreOptions, ScoreRecord, ScoreRequest, ScoreResult, Scorer,
};
use crate::trace::RawResponse;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Value { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind_addr: SocketAddr,
    /// `None` serves only traces that carry their own embeddings.
    pub embedder: Option<EmbedderConfig>,
    pub default_options: ScoreOptions,
    pub max_body_bytes: usize,
    pub max_traces: usize,
    pub parallelism: usize,
    pub health_ttl: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind_addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            embedder: None,
            default_options: ScoreOptions::default(),
            max_body_bytes: 32 * 1024 * 1024,
            max_traces: 1024,
            parallelism: std::thread::available_parallelism().map_or(4, |n| n.get()),
            health_ttl: Duration::from_secs(5),
        }
    }
}

impl ServiceConfig {
    /// Defaults, then `SARL_BIND_ADDR` / `SARL_EMBED_URL` / `SARL_EMBED_MODEL`.
    pub fn from_env() -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var("SARL_BIND_ADDR") {
            cfg.set("bind_addr", &v)?;
        }
        if let Ok(v) = std::env::var("SARL_EMBED_URL") {
            cfg.set("embed_url", &v)?;
        }
        if let Ok(v) = std::env::var("SARL_EMBED_MODEL") {
            cfg.set("embed_model", &v)?;
        }
        Ok(cfg)
    }

    /// Applies a `key = value` file on top of `self`. Blank lines and lines
    /// starting with `#` are skipped; values may be quoted.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_str(&text)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::Value {
                key: key.to_owned(),
                message: e.to_string(),
            })
        }
        fn positive(key: &str, value: &str) -> Result<usize, ConfigError> {
            let n: usize = parse(key, value)?;
            if n == 0 {
                return Err(ConfigError::Value {
                    key: key.to_owned(),
                    message: "must be positive".into(),
                });
            }
            Ok(n)
        }
        match key {
            "bind_addr" => self.bind_addr = parse(key, value)?,
            "max_body_bytes" => self.max_body_bytes = positive(key, value)?,
            "max_traces" => self.max_traces = positive(key, value)?,
            "parallelism" => self.parallelism = positive(key, value)?,
            "health_ttl_ms" => self.health_ttl = Duration::from_millis(parse(key, value)?),
            "clustering" => {
                self.default_options.clustering =
                    value.parse().map_err(|message| ConfigError::Value {
                        key: key.to_owned(),
                        message,
                    })?
            }
            "seed" => self.default_options.seed = parse(key, value)?,
            "degenerate_reward" => self.default_options.degenerate_reward = parse(key, value)?,
            "embed_url"
            | "embed_model"
            | "embed_batch_size"
            | "embed_timeout_ms"
            | "embed_max_in_flight"
            | "embed_retry_budget"
            | "embed_cache_capacity" => {
                let e = self.embedder.get_or_insert_with(EmbedderConfig::default);
                match key {
                    "embed_url" => e.endpoint_url = value.to_owned(),
                    "embed_model" => e.model_name = value.to_owned(),
                    "embed_batch_size" => e.request_batch_size = positive(key, value)?,
                    "embed_timeout_ms" => e.timeout = Duration::from_millis(parse(key, value)?),
                    "embed_max_in_flight" => e.max_in_flight = positive(key, value)?,
                    "embed_retry_budget" => e.retry_budget = parse(key, value)?,
                    _ => e.cache_capacity = parse(key, value)?,
                }
            }
            other => {
                return Err(ConfigError::Value {
                    key: other.to_owned(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }
}

/// Monotone service counters.
#[derive(Debug, Default)]
pub struct Metrics {
    requests: AtomicU64,
    traces_scored: AtomicU64,
    degenerate: AtomicU64,
    item_errors: AtomicU64,
    extract_us: AtomicU64,
    embed_us: AtomicU64,
    cluster_us: AtomicU64,
    graph_us: AtomicU64,
    total_us: AtomicU64,
}

impl Metrics {
    fn record(&self, outcomes: &[Result<ScoreResult, ItemError>]) {
        for o in outcomes {
            match o {
                Ok(r) => {
                    self.traces_scored.fetch_add(1, Ordering::Relaxed);
                    if r.score.degenerate {
                        self.degenerate.fetch_add(1, Ordering::Relaxed);
                    }
                    if let Some(t) = r.timing {
                        self.extract_us.fetch_add(t.extract_us, Ordering::Relaxed);
                        self.embed_us.fetch_add(t.embed_us, Ordering::Relaxed);
                        self.cluster_us.fetch_add(t.cluster_us, Ordering::Relaxed);
                        self.graph_us.fetch_add(t.graph_us, Ordering::Relaxed);
                        self.total_us.fetch_add(t.total_us, Ordering::Relaxed);
                    }
                }
                Err(_) => {
                    self.item_errors.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }

    pub fn render(&self) -> String {
        let load = |c: &AtomicU64| c.load(Ordering::Relaxed);
        let scored = load(&self.traces_scored);
        let mut out = String::new();
        let mut counter = |name: &str, help: &str, value: u64| {
            out.push_str(&format!(
                "# HELP {name} {help}\n# TYPE {name} counter\n{name} {value}\n"
            ));
        };
        counter(
            "sarl_requests_total",
            "Scoring requests received.",
            load(&self.requests),
        );
        counter(
            "sarl_traces_scored_total",
            "Traces scored successfully.",
            scored,
        );
        counter(
            "sarl_degenerate_total",
            "Scored traces with a degenerate reasoning map.",
            load(&self.degenerate),
        );
        counter(
            "sarl_item_errors_total",
            "Traces that failed to score.",
            load(&self.item_errors),
        );
        out.push_str("# HELP sarl_stage_latency_mean_seconds Mean per-trace latency of each scoring stage.\n");
        out.push_str("# TYPE sarl_stage_latency_mean_seconds gauge\n");
        for (stage, c) in [
            ("extract", &self.extract_us),
            ("embed", &self.embed_us),
            ("cluster", &self.cluster_us),
            ("graph", &self.graph_us),
            ("total", &self.total_us),
        ] {
            let mean = if scored == 0 {
                0.0
            } else {
                load(c) as f64 / scored as f64 / 1e6
            };
            out.push_str(&format!(
                "sarl_stage_latency_mean_seconds{{stage=\"{stage}\"}} {mean}\n"
            ));
        }
        out
    }
}

pub struct AppState {
    cfg: ServiceConfig,
    scorer: Scorer,
    pool: rayon::ThreadPool,
    metrics: Metrics,
    health: Mutex<Option<(Instant, bool)>>,
    probes: AtomicU64,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Result<Self, crate::embed::EmbedError> {
        let scorer = match &cfg.embedder {
            Some(e) => Scorer::new(Arc::new(HttpEmbedder::new(e.clone())?)),
            None => Scorer::offline(),
        };
        Ok(Self::with_scorer(cfg, scorer))
    }

    pub fn with_scorer(cfg: ServiceConfig, scorer: Scorer) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallelism.max(1))
            .thread_name(|i| format!("sarl-score-{i}"))
            .build()
            .expect("scoring thread pool");
        Self {
            cfg,
            scorer,
            pool,
            metrics: Metrics::default(),
            health: Mutex::new(None),
            probes: AtomicU64::new(0),
        }
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    /// Embedder probes issued so far.
    pub fn probes(&self) -> u64 {
        self.probes.load(Ordering::Relaxed)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.cfg.max_body_bytes;
    Router::new()
        .route("/v1/score", post(score))
        .route("/healthz", get(healthz))
        .route("/v1/metrics", get(metrics))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreBody {
    traces: Vec<serde_json::Value>,
    #[serde(default)]
    options: Option<ScoreOptions>,
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": {"message": message.into()}}))).into_response()
}

/// Parsed trace or its in-place error.
fn parse_trace(value: serde_json::Value, opts: &ScoreOptions) -> Result<ScoreRequest, ErrorRecord> {
    let id = value.get("id").and_then(|v| v.as_str()).map(str::to_owned);
    let fail = |message: String| ErrorRecord {
        id: id.clone(),
        line: None,
        error: ItemError::new(ErrorCode::InvalidRequest, message),
    };
    let raw: RawResponse = serde_json::from_value(value).map_err(|e| fail(e.to_string()))?;
    raw.validate().map_err(|e| fail(e.to_string()))?;
    Ok(ScoreRequest::from_raw(raw, opts))
}

/// Parses a `/v1/score` body into per-trace requests. `Err` carries the
/// HTTP status and message for a whole-request rejection.
pub fn parse_score_body(
    body: &[u8],
    defaults: &ScoreOptions,
    max_traces: usize,
) -> Result<Vec<Result<ScoreRequest, ErrorRecord>>, (StatusCode, String)> {
    let parsed: ScoreBody = serde_json::from_slice(body)
        .map_err(|e| (StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    if parsed.traces.len() > max_traces {
        return Err((
            StatusCode::PAYLOAD_TOO_LARGE,
            format!(
                "{} traces exceed the limit of {max_traces}",
                parsed.traces.len()
            ),
        ));
    }
    let opts = parsed.options.unwrap_or_else(|| defaults.clone());
    Ok(parsed
        .traces
        .into_iter()
        .map(|t| parse_trace(t, &opts))
        .collect())
}

async fn score(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    state.metrics.requests.fetch_add(1, Ordering::Relaxed);
    let items = match parse_score_body(&body, &state.cfg.default_options, state.cfg.max_traces) {
        Ok(items) => items,
        Err((status, message)) => return error_response(status, message),
    };

    let st = state.clone();
    let joined = tokio::task::spawn_blocking(move || {
        let reqs: Vec<ScoreRequest> = items
            .iter()
            .filter_map(|i| i.as_ref().ok().cloned())
            .collect();
        let scored = st.scorer.score_batch_in(&st.pool, &reqs);
        st.metrics.record(&scored);
        let mut scored = scored.into_iter().zip(reqs);
        let records: Vec<ScoreRecord> = items
            .into_iter()
            .map(|item| match item {
                Ok(_) => {
                    let (outcome, req) = scored.next().expect("one outcome per request");
                    ScoreRecord::from_outcome(&req.id, outcome)
                }
                Err(e) => {
                    st.metrics.item_errors.fetch_add(1, Ordering::Relaxed);
                    ScoreRecord::Err(e)
                }
            })
            .collect();
        records
    })
    .await;
    let records = match joined {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };

    let unavailable = records
        .iter()
        .filter(
            |r| matches!(r, ScoreRecord::Err(e) if e.error.code == ErrorCode::EmbedderUnavailable),
        )
        .count();
    let attempted = records
        .iter()
        .filter(|r| !matches!(r, ScoreRecord::Err(e) if e.error.code == ErrorCode::InvalidRequest))
        .count();
    if unavailable > 0 && unavailable == attempted {
        return (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({"error": {"message": "embedding endpoint unavailable", "retryable": true}, "results": records})),
        )
            .into_response();
    }
    Json(json!({ "results": records })).into_response()
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    let cached = {
        let h = state.health.lock();
        h.filter(|(at, _)| at.elapsed() < state.cfg.health_ttl)
            .map(|(_, ok)| ok)
    };
    let ok = match cached {
        Some(ok) => ok,
        None => {
            let st = state.clone();
            let ok = tokio::task::spawn_blocking(move || match st.scorer.encoder() {
                Some(enc) => {
                    st.probes.fetch_add(1, Ordering::Relaxed);
                    enc.probe()
                }
                None => false,
            })
            .await
            .unwrap_or(false);
            *state.health.lock() = Some((Instant::now(), ok));
            ok
        }
    };
    Json(json!({"status": "ok", "embedder": if ok { "ok" } else { "degraded" }})).into_response()
}

async fn metrics(State(state): State<Arc<AppState>>) -> Response {
    (
        [(header::CONTENT_TYPE, "text/plain; version=0.0.4")],
        state.metrics.render(),
    )
        .into_response()
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A service running on a background thread with its own runtime. Stops
/// when dropped.
pub struct RunningService {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningService {
    pub fn start(state: AppState) -> std::io::Result<Self> {
        let state = Arc::new(state);
        let listener = std::net::TcpListener::bind(state.cfg.bind_addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let st = state.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("service runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = serve(listener, st, async {
                    let _ = rx.await;
                })
                .await;
            });
        });
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
