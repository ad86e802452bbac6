//! trace → steps → embeddings → clusters → map → score.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_trace, ClusterAssignment, ClusterConfig, ClusterMethod, NoisePolicy};
use crate::embed::{embed_steps, passthrough, EmbedError, StepEncoder};
use crate::graph::{structure_reward_with, ReasoningMap, StructureScore};
use crate::seed::trace_seed;
use crate::trace::{segment_steps, think_span, RawResponse, ThinkMode};

/// Per-request knobs shared by the CLI, the service and library callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreOptions {
    pub clustering: ClusterMethod,
    pub seed: u64,
    pub noise_policy: NoisePolicy,
    pub think_mode: ThinkMode,
    pub degenerate_reward: f64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub k_floor: usize,
    pub fixed_k: Option<usize>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        let c = ClusterConfig::default();
        Self {
            clustering: c.method,
            seed: 0,
            noise_policy: c.noise_policy,
            think_mode: ThinkMode::default(),
            degenerate_reward: 0.0,
            kmeans_max_iter: c.kmeans_max_iter,
            kmeans_tol: c.kmeans_tol,
            k_floor: c.k_floor,
            fixed_k: None,
        }
    }
}

impl ScoreOptions {
    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            method: self.clustering,
            kmeans_max_iter: self.kmeans_max_iter,
            kmeans_tol: self.kmeans_tol,
            seed: self.seed,
            k_floor: self.k_floor,
            fixed_k: self.fixed_k,
            noise_policy: self.noise_policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    Text(String),
    Steps(Vec<String>),
    StepsWithEmbeddings {
        steps: Vec<String>,
        embeddings: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest {
    pub id: String,
    pub source: TraceSource,
    pub cluster: ClusterConfig,
    pub think_mode: ThinkMode,
    pub degenerate_reward: f64,
    /// Global seed; the clustering seed is derived from it and the trace id.
    pub seed: u64,
}

impl ScoreRequest {
    pub fn new(id: impl Into<String>, source: TraceSource, opts: &ScoreOptions) -> Self {
        Self {
            id: id.into(),
            source,
            cluster: opts.cluster_config(),
            think_mode: opts.think_mode,
            degenerate_reward: opts.degenerate_reward,
            seed: opts.seed,
        }
    }

    /// Builds a request from a corpus record. Steps take precedence over
    /// text; embeddings are only honoured alongside steps.
    pub fn from_raw(raw: RawResponse, opts: &ScoreOptions) -> Self {
        let source = match (raw.steps, raw.embeddings, raw.text) {
            (Some(steps), Some(embeddings), _) => {
                TraceSource::StepsWithEmbeddings { steps, embeddings }
            }
            (Some(steps), None, _) => TraceSource::Steps(steps),
            (None, _, text) => TraceSource::Text(text.unwrap_or_default()),
        };
        Self::new(raw.id, source, opts)
    }

    pub fn validate(&self) -> Result<(), ItemError> {
        if self.id.is_empty() {
            return Err(ItemError::new(ErrorCode::InvalidRequest, "empty id"));
        }
        if let TraceSource::StepsWithEmbeddings { steps, embeddings } = &self.source {
            if steps.len() != embeddings.len() {
                return Err(ItemError::new(
                    ErrorCode::InvalidRequest,
                    format!("{} embeddings for {} steps", embeddings.len(), steps.len()),
                ));
            }
        }
        self.cluster
            .validate()
            .map_err(|e| ItemError::new(ErrorCode::InvalidRequest, e.to_string()))?;
        if !self.degenerate_reward.is_finite() {
            return Err(ItemError::new(
                ErrorCode::InvalidRequest,
                "degenerate_reward must be finite",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidRequest,
    InvalidEmbeddings,
    NoEmbedder,
    EmbedderUnavailable,
    EmbedderProtocol,
    ClusteringFailed,
}

/// A per-item failure, reported in place of a result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ItemError {
    pub code: ErrorCode,
    pub message: String,
    pub retryable: bool,
}

impl ItemError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            retryable: false,
        }
    }
}

impl From<EmbedError> for ItemError {
    fn from(e: EmbedError) -> Self {
        let code = match &e {
            EmbedError::Transport { .. } => ErrorCode::EmbedderUnavailable,
            EmbedError::Protocol(_) => ErrorCode::EmbedderProtocol,
            _ => ErrorCode::InvalidEmbeddings,
        };
        Self {
            code,
            retryable: e.is_retryable(),
            message: e.to_string(),
        }
    }
}

/// Wall-clock time per stage, in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub extract_us: u64,
    pub embed_us: u64,
    pub cluster_us: u64,
    pub graph_us: u64,
    pub total_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub id: String,
    #[serde(flatten)]
    pub score: StructureScore,
    pub k: usize,
    pub num_edges: usize,
    pub num_steps: usize,
    pub method: ClusterMethod,
    /// Clustering seed actually used for this trace.
    pub seed: u64,
    pub assignments: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<StageTimings>,
}

impl ScoreResult {
    pub fn without_timing(mut self) -> Self {
        self.timing = None;
        self
    }
}

/// One output line: a result or an in-place error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreRecord {
    Ok(ScoreResult),
    Err(ErrorRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub error: ItemError,
}

impl ScoreRecord {
    pub fn from_outcome(id: &str, outcome: Result<ScoreResult, ItemError>) -> Self {
        match outcome {
            Ok(r) => Self::Ok(r),
            Err(error) => Self::Err(ErrorRecord {
                id: Some(id.to_owned()),
                line: None,
                error,
            }),
        }
    }

    pub fn result(&self) -> Option<&ScoreResult> {
        match self {
            Self::Ok(r) => Some(r),
            Self::Err(_) => None,
        }
    }
}

/// A scored trace together with its map, for callers that need the graph.
#[derive(Debug, Clone)]
pub struct Scored {
    pub result: ScoreResult,
    pub map: ReasoningMap,
    pub assignment: ClusterAssignment,
}

/// Runs the scoring pipeline. The encoder is only consulted for traces that
/// do not carry their own embeddings.
#[derive(Clone, Default)]
pub struct Scorer {
    encoder: Option<Arc<dyn StepEncoder>>,
}

impl std::fmt::Debug for Scorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scorer")
            .field("has_encoder", &self.encoder.is_some())
            .finish()
    }
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

impl Scorer {
    pub fn new(encoder: Arc<dyn StepEncoder>) -> Self {
        Self {
            encoder: Some(encoder),
        }
    }

    /// A scorer that only accepts precomputed embeddings.
    pub fn offline() -> Self {
        Self { encoder: None }
    }

    pub fn encoder(&self) -> Option<&Arc<dyn StepEncoder>> {
        self.encoder.as_ref()
    }

    pub fn score_one(&self, req: &ScoreRequest) -> Result<ScoreResult, ItemError> {
        self.score_detailed(req).map(|s| s.result)
    }

    pub fn score_detailed(&self, req: &ScoreRequest) -> Result<Scored, ItemError> {
        let start = Instant::now();
        req.validate()?;
        let mut timing = StageTimings::default();

        let t = Instant::now();
        let owned_steps;
        let (steps, given) = match &req.source {
            TraceSource::Text(text) => {
                owned_steps = segment_steps(&text[think_span(text, req.think_mode)]);
                (&owned_steps, None)
            }
            TraceSource::Steps(steps) => (steps, None),
            TraceSource::StepsWithEmbeddings { steps, embeddings } => (steps, Some(embeddings)),
        };
        timing.extract_us = micros(t);

        let seed = trace_seed(req.seed, &req.id);
        let mut cluster_cfg = req.cluster.clone();
        cluster_cfg.seed = seed;

        if steps.is_empty() {
            let map = ReasoningMap::empty(0);
            let assignment = ClusterAssignment {
                labels: Vec::new(),
                k: 0,
                method: cluster_cfg.method,
                seed,
            };
            timing.total_us = micros(start);
            return Ok(Scored {
                result: ScoreResult {
                    id: req.id.clone(),
                    score: structure_reward_with(&map, req.degenerate_reward),
                    k: 0,
                    num_edges: 0,
                    num_steps: 0,
                    method: cluster_cfg.method,
                    seed,
                    assignments: Vec::new(),
                    timing: Some(timing),
                },
                map,
                assignment,
            });
        }

        let t = Instant::now();
        let embeddings = match given {
            Some(raw) => passthrough(raw)?,
            None => {
                let encoder = self.encoder.as_deref().ok_or_else(|| {
                    ItemError::new(
                        ErrorCode::NoEmbedder,
                        "trace has no embeddings and no embedder is configured",
                    )
                })?;
                embed_steps(steps, encoder)?
            }
        };
        timing.embed_us = micros(t);

        let t = Instant::now();
        let assignment = cluster_trace(&embeddings, &cluster_cfg)
            .map_err(|e| ItemError::new(ErrorCode::ClusteringFailed, e.to_string()))?;
        timing.cluster_us = micros(t);

        let t = Instant::now();
        let map = ReasoningMap::from_assignment(&assignment);
        let score: StructureScore = structure_reward_with(&map, req.degenerate_reward);
        timing.graph_us = micros(t);
        timing.total_us = micros(start);

        Ok(Scored {
            result: ScoreResult {
                id: req.id.clone(),
                score,
                k: assignment.k,
                num_edges: map.num_edges(),
                num_steps: steps.len(),
                method: assignment.method,
                seed,
                assignments: assignment.labels.clone(),
                timing: Some(timing),
            },
            map,
            assignment,
        })
    }

    /// Scores every request; results are aligned with `reqs` and independent
    /// of `parallelism`.
    pub fn score_batch(
        &self,
        reqs: &[ScoreRequest],
        parallelism: usize,
    ) -> Vec<Result<ScoreResult, ItemError>> {
        let parallelism = parallelism.max(1);
        if parallelism == 1 || reqs.len() <= 1 {
            return reqs.iter().map(|r| self.score_one(r)).collect();
        }
        match rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
        {
            Ok(pool) => self.score_batch_in(&pool, reqs),
            Err(e) => {
                tracing::warn!(error = %e, "could not build scoring pool, scoring sequentially");
                reqs.iter().map(|r| self.score_one(r)).collect()
            }
        }
    }

    /// As [`score_batch`](Self::score_batch), on an existing pool.
    pub fn score_batch_in(
        &self,
        pool: &rayon::ThreadPool,
        reqs: &[ScoreRequest],
    ) -> Vec<Result<ScoreResult, ItemError>> {
        use rayon::prelude::*;
        pool.install(|| reqs.par_iter().map(|r| self.score_one(r)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingEncoder;
    use crate::graph::structure_reward;

    fn one_hot(i: usize, d: usize) -> Vec<f64> {
        (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()
    }

    fn steps_req(id: &str, types: &[usize], dim: usize, opts: &ScoreOptions) -> ScoreRequest {
        let steps = types.iter().map(|t| format!("step of type {t}")).collect();
        let embeddings = types.iter().map(|&t| one_hot(t, dim)).collect();
        ScoreRequest::new(
            id,
            TraceSource::StepsWithEmbeddings { steps, embeddings },
            opts,
        )
    }

    #[test]
    fn end_to_end_equals_composed_modules() {
        let opts = ScoreOptions {
            seed: 7,
            ..ScoreOptions::default()
        };
        let req = steps_req("t", &[0, 0, 1, 0, 2], 3, &opts);
        let got = Scorer::offline().score_one(&req).unwrap();

        // Hand composition of the module operations.
        let emb = passthrough(
            &(0..5)
                .map(|i| one_hot([0, 0, 1, 0, 2][i], 3))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let mut cfg = opts.cluster_config();
        cfg.seed = trace_seed(7, "t");
        let a = cluster_trace(&emb, &cfg).unwrap();
        let want = structure_reward(&ReasoningMap::from_assignment(&a));
        assert_eq!(got.score, want);
        assert_eq!(got.assignments, a.labels);
        // choose_k(5) = 2, so two of the three one-hot types share a cluster
        assert_eq!(got.k, 2);
    }

    #[test]
    fn one_hot_trace_with_three_types() {
        // choose_k(9) = 3 and one-hot points separate perfectly
        let req = steps_req(
            "t9",
            &[0, 0, 1, 0, 2, 2, 0, 1, 0],
            3,
            &ScoreOptions {
                seed: 7,
                ..Default::default()
            },
        );
        let r = Scorer::offline().score_one(&req).unwrap();
        assert_eq!(r.k, 3);
        assert_eq!(r.num_edges, 2);
        assert!((r.score.sr - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_k_recovers_each_one_hot_type() {
        let opts = ScoreOptions {
            seed: 7,
            fixed_k: Some(3),
            ..Default::default()
        };
        let scored = Scorer::offline()
            .score_detailed(&steps_req("t", &[0, 0, 1, 0, 2], 3, &opts))
            .unwrap();
        // Type 0 is the hub: {{0,1},{0,2}} up to relabeling, a 3-path.
        let (canonical, k) = crate::cluster::compact_first_occurrence(&scored.assignment.labels);
        assert_eq!(canonical, vec![0, 0, 1, 0, 2]);
        assert_eq!(
            ReasoningMap::from_labels(k, &canonical).edges(),
            vec![(0, 1), (0, 2)]
        );
        assert_eq!(scored.map.num_edges(), 2);
        let want = structure_reward(&scored.map);
        assert_eq!(scored.result.score, want);
        assert!((want.sr - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_degenerate() {
        let req = ScoreRequest::new(
            "e",
            TraceSource::Text(String::new()),
            &ScoreOptions::default(),
        );
        let r = Scorer::offline().score_one(&req).unwrap();
        assert!(r.score.degenerate);
        assert_eq!(r.score.sr, 0.0);
        assert_eq!(r.num_steps, 0);
    }

    #[test]
    fn repeated_requests_are_identical() {
        let scorer = Scorer::new(Arc::new(HashingEncoder::new(16)));
        let text = "<think>read problem\nset up equation\nsolve equation\ncheck answer\nset up equation again\nsolve</think>4";
        let req = ScoreRequest::new(
            "r",
            TraceSource::Text(text.into()),
            &ScoreOptions::default(),
        );
        let a = serde_json::to_string(&scorer.score_one(&req).unwrap().without_timing()).unwrap();
        let b = serde_json::to_string(&scorer.score_one(&req).unwrap().without_timing()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_embedder_is_an_item_error() {
        let req = ScoreRequest::new(
            "x",
            TraceSource::Steps(vec!["a".into()]),
            &ScoreOptions::default(),
        );
        let err = Scorer::offline().score_one(&req).unwrap_err();
        assert_eq!(err.code, ErrorCode::NoEmbedder);
    }

    #[test]
    fn batch_reports_errors_in_place() {
        let opts = ScoreOptions::default();
        let mut reqs: Vec<ScoreRequest> = (0..8)
            .map(|_| steps_req("same", &[0, 1, 2, 0, 1], 3, &opts))
            .collect();
        let first = Scorer::offline().score_batch(&reqs, 4);
        assert!(first
            .iter()
            .all(|r| r.as_ref().unwrap().clone().without_timing()
                == first[0].as_ref().unwrap().clone().without_timing()));

        reqs[3].source = TraceSource::StepsWithEmbeddings {
            steps: vec!["a".into(), "b".into()],
            embeddings: vec![one_hot(0, 3)],
        };
        let out = Scorer::offline().score_batch(&reqs, 4);
        assert_eq!(out.len(), 8);
        assert_eq!(out.iter().filter(|r| r.is_err()).count(), 1);
        assert_eq!(out[3].as_ref().unwrap_err().code, ErrorCode::InvalidRequest);
    }

    #[test]
    fn timings_are_bounded_by_total() {
        let req = steps_req("t", &[0, 1, 2, 0, 1, 2, 3, 0], 4, &ScoreOptions::default());
        let t = Scorer::offline().score_one(&req).unwrap().timing.unwrap();
        assert!(t.extract_us + t.embed_us + t.cluster_us + t.graph_us <= t.total_us);
    }

    #[test]
    fn result_json_shape() {
        let req = steps_req("j", &[0, 1, 0], 2, &ScoreOptions::default());
        let r = Scorer::offline().score_one(&req).unwrap().without_timing();
        let v = serde_json::to_value(&r).unwrap();
        for key in [
            "id",
            "sr",
            "local_depth",
            "global_flow",
            "c",
            "l",
            "degenerate",
            "k",
            "num_edges",
            "num_steps",
            "assignments",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: ScoreResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
