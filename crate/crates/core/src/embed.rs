//! Step embeddings.
//!
//! Steps are encoded by an external text embedding server speaking the
//! `/v1/embeddings` wire shape (`{"model", "input"}` in, `{"data": [{"index",
//! "embedding"}]}` out), or supplied precomputed. Every vector leaving this
//! module is unit-normalized.

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use lru::LruCache;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Norms below this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("zero-norm vector at index {index}")]
    ZeroVector { index: usize },
    #[error("vector {index} has dimension {found}, expected {expected}")]
    Ragged {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding dimension {0} is below the minimum of 2")]
    DimensionTooSmall(usize),
    #[error("no steps to embed")]
    EmptyInput,
    #[error("embedding endpoint unreachable after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("embedding protocol error: {0}")]
    Protocol(String),
}

impl EmbedError {
    /// Whether a caller may reasonably retry the same request later.
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Transport { .. })
    }
}

/// A unit-norm embedding of one reasoning step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEmbedding {
    pub step_index: usize,
    pub vector: Vec<f64>,
}

impl StepEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn dot(&self, other: &StepEmbedding) -> f64 {
        self.vector
            .iter()
            .zip(&other.vector)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Returns `vector / ||vector||₂`.
pub fn normalize(vector: &[f64]) -> Result<Vec<f64>, EmbedError> {
    normalize_at(vector, 0)
}

fn normalize_at(vector: &[f64], index: usize) -> Result<Vec<f64>, EmbedError> {
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm < MIN_NORM {
        return Err(EmbedError::ZeroVector { index });
    }
    Ok(vector.iter().map(|x| x / norm).collect())
}

/// Normalizes precomputed vectors, checking that they share one dimension.
pub fn passthrough(embeddings: &[Vec<f64>]) -> Result<Vec<StepEmbedding>, EmbedError> {
    let Some(first) = embeddings.first() else {
        return Ok(Vec::new());
    };
    let dim = first.len();
    for (index, v) in embeddings.iter().enumerate() {
        if v.len() != dim {
            return Err(EmbedError::Ragged {
                index,
                expected: dim,
                found: v.len(),
            });
        }
    }
    if dim < 2 {
        return Err(EmbedError::DimensionTooSmall(dim));
    }
    embeddings
        .iter()
        .enumerate()
        .map(|(step_index, v)| {
            Ok(StepEmbedding {
                step_index,
                vector: normalize_at(v, step_index)?,
            })
        })
        .collect()
}

/// Anything that maps step strings to raw (not necessarily unit) vectors,
/// one per input, in input order.
pub trait StepEncoder: Send + Sync {
    fn encode(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;

    /// Cheap reachability check used by health endpoints.
    fn probe(&self) -> bool {
        self.encode(&["ping".to_owned()]).is_ok()
    }
}

/// Encodes `steps` and normalizes the result.
pub fn embed_steps(
    steps: &[String],
    encoder: &dyn StepEncoder,
) -> Result<Vec<StepEmbedding>, EmbedError> {
    if steps.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    let raw = encoder.encode(steps)?;
    if raw.len() != steps.len() {
        return Err(EmbedError::Protocol(format!(
            "encoder returned {} vectors for {} steps",
            raw.len(),
            steps.len()
        )));
    }
    passthrough(&raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub request_batch_size: usize,
    #[serde(with = "duration_ms")]
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub retry_budget: u32,
    #[serde(with = "duration_ms")]
    pub backoff_base: Duration,
    /// Per-step LRU entries; 0 disables caching.
    pub cache_capacity: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8000/v1/embeddings".to_owned(),
            model_name: "Qwen/Qwen3-Embedding-0.6B".to_owned(),
            request_batch_size: 64,
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
            retry_budget: 3,
            backoff_base: Duration::from_millis(100),
            cache_capacity: 100_000,
        }
    }
}

impl EmbedderConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            ..Self::default()
        }
    }

    /// Applies `SARL_EMBED_URL` / `SARL_EMBED_MODEL` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var("SARL_EMBED_URL") {
            self.endpoint_url = url;
        }
        if let Ok(model) = std::env::var("SARL_EMBED_MODEL") {
            self.model_name = model;
        }
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.request_batch_size == 0 {
            return Err("request_batch_size must be >= 1".into());
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be >= 1".into());
        }
        if self.endpoint_url.is_empty() {
            return Err("endpoint_url is empty".into());
        }
        Ok(())
    }
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

type CacheKey = [u8; 32];

/// HTTP client for an external embedding server.
///
/// Requests are batched at `request_batch_size` with at most `max_in_flight`
/// outstanding, retried with exponential backoff, and answered from a shared
/// per-step LRU cache when possible.
pub struct HttpEmbedder {
    cfg: EmbedderConfig,
    client: reqwest::blocking::Client,
    cache: Option<Mutex<LruCache<CacheKey, Vec<f64>>>>,
    requests_sent: AtomicUsize,
}

impl std::fmt::Debug for HttpEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpEmbedder")
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

impl HttpEmbedder {
    pub fn new(cfg: EmbedderConfig) -> Result<Self, EmbedError> {
        cfg.validate().map_err(EmbedError::Protocol)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| EmbedError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        let cache = NonZeroUsize::new(cfg.cache_capacity).map(|n| Mutex::new(LruCache::new(n)));
        Ok(Self {
            cfg,
            client,
            cache,
            requests_sent: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests_sent(&self) -> usize {
        self.requests_sent.load(Ordering::Relaxed)
    }

    fn cache_key(&self, text: &str) -> CacheKey {
        let mut h = Sha256::new();
        h.update(self.cfg.model_name.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        h.finalize().into()
    }

    fn post_once(&self, batch: &[String]) -> Result<Vec<Vec<f64>>, Attempt> {
        self.requests_sent.fetch_add(1, Ordering::Relaxed);
        let resp = self
            .client
            .post(&self.cfg.endpoint_url)
            .json(&EmbeddingRequest {
                model: &self.cfg.model_name,
                input: batch,
            })
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(EmbedError::Protocol(format!(
                "HTTP {status}"
            ))));
        }
        let body: EmbeddingResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(EmbedError::Protocol(e.to_string())))?;
        let mut data = body.data;
        data.sort_by_key(|d| d.index);
        let aligned =
            data.len() == batch.len() && data.iter().enumerate().all(|(i, d)| d.index == i);
        if !aligned {
            return Err(Attempt::Fatal(EmbedError::Protocol(format!(
                "response indices do not cover 0..{}",
                batch.len()
            ))));
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }

    fn post_with_retry(&self, batch: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut attempt = 0u32;
        loop {
            match self.post_once(batch) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    if attempt >= self.cfg.retry_budget {
                        return Err(EmbedError::Transport {
                            attempts: attempt + 1,
                            message,
                        });
                    }
                    let delay = self
                        .cfg
                        .backoff_base
                        .saturating_mul(1u32 << attempt.min(16));
                    tracing::debug!(attempt, ?delay, %message, "embedding request failed, backing off");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

enum Attempt {
    Retry(String),
    Fatal(EmbedError),
}

impl StepEncoder for HttpEmbedder {
    /// One uncached request, no retries.
    fn probe(&self) -> bool {
        self.post_once(&["ping".to_owned()]).is_ok()
    }

    fn encode(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let keys: Vec<CacheKey> = texts.iter().map(|t| self.cache_key(t)).collect();
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        if let Some(cache) = &self.cache {
            let mut cache = cache.lock();
            for (slot, key) in out.iter_mut().zip(&keys) {
                *slot = cache.get(key).cloned();
            }
        }

        // Unique misses, first occurrence order.
        let mut miss_texts: Vec<String> = Vec::new();
        let mut miss_of: Vec<Option<usize>> = vec![None; texts.len()];
        {
            let mut seen: std::collections::HashMap<&CacheKey, usize> = Default::default();
            for (i, slot) in out.iter().enumerate() {
                if slot.is_none() {
                    let j = *seen.entry(&keys[i]).or_insert_with(|| {
                        miss_texts.push(texts[i].clone());
                        miss_texts.len() - 1
                    });
                    miss_of[i] = Some(j);
                }
            }
        }

        if !miss_texts.is_empty() {
            let fetched = self.fetch(&miss_texts)?;
            if let Some(cache) = &self.cache {
                let mut cache = cache.lock();
                for (text, v) in miss_texts.iter().zip(&fetched) {
                    cache.put(self.cache_key(text), v.clone());
                }
            }
            for (slot, j) in out.iter_mut().zip(&miss_of) {
                if let Some(j) = j {
                    *slot = Some(fetched[*j].clone());
                }
            }
        }

        let vectors: Vec<Vec<f64>> = out.into_iter().map(|v| v.expect("filled")).collect();
        if let Some(first) = vectors.first() {
            if let Some((index, v)) = vectors
                .iter()
                .enumerate()
                .find(|(_, v)| v.len() != first.len())
            {
                return Err(EmbedError::Protocol(format!(
                    "dimension mismatch: vector {index} has {} components, expected {}",
                    v.len(),
                    first.len()
                )));
            }
        }
        Ok(vectors)
    }
}

/// Outcome of one request batch, filled in by whichever worker sent it.
type BatchSlot = Mutex<Option<Result<Vec<Vec<f64>>, EmbedError>>>;

impl HttpEmbedder {
    /// Fetches vectors for `texts` in batches, up to `max_in_flight` at once,
    /// normalized on arrival so the cache holds unit vectors.
    fn fetch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let batches: Vec<&[String]> = texts.chunks(self.cfg.request_batch_size).collect();
        let results: Vec<BatchSlot> = batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.cfg.max_in_flight.min(batches.len());

        let run = || loop {
            let b = next.fetch_add(1, Ordering::Relaxed);
            if b >= batches.len() {
                break;
            }
            let res = self.post_with_retry(batches[b]).and_then(|vs| {
                if vs.len() != batches[b].len() {
                    return Err(EmbedError::Protocol("short batch".into()));
                }
                vs.iter()
                    .enumerate()
                    .map(|(i, v)| normalize_at(v, b * self.cfg.request_batch_size + i))
                    .collect()
            });
            *results[b].lock() = Some(res);
        };
        if workers <= 1 {
            run();
        } else {
            std::thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(run);
                }
            });
        }

        let mut out = Vec::with_capacity(texts.len());
        for slot in results {
            out.extend(slot.into_inner().expect("every batch visited")?);
        }
        Ok(out)
    }
}

/// Deterministic local encoder: hashed character trigrams plus word
/// unigrams, projected to `dim` signed buckets. Lexically similar steps land
/// close together. Intended for offline runs, demos and tests; it carries no
/// learned semantics.
#[derive(Debug, Clone)]
pub struct HashingEncoder {
    dim: usize,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "hashing encoder needs at least 2 dimensions");
        Self { dim }
    }

    pub fn encode_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let mut add = |feature: &[u8], weight: f64| {
            let h = crate::seed::stable_hash64(feature);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign * weight;
        };
        let lower = text.to_lowercase();
        let padded: Vec<char> = format!("  {lower}  ").chars().collect();
        for w in padded.windows(3) {
            let s: String = w.iter().collect();
            add(s.as_bytes(), 1.0);
        }
        for word in lower.split_whitespace() {
            add(format!("w:{word}").as_bytes(), 2.0);
        }
        // Guarantee a non-zero vector for any input.
        v[0] += 1e-3;
        v
    }
}

impl StepEncoder for HashingEncoder {
    fn encode(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.encode_one(t)).collect())
    }

    fn probe(&self) -> bool {
        true
    }
}
