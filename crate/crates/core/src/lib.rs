//! Label-free Structure Reward for chain-of-thought traces.
//!
//! A response's think block is split into steps, each step is embedded,
//! the embeddings are clustered into latent reasoning types, and the
//! transitions between types form an undirected Reasoning Map. The map is
//! scored by its small-world shape:
//!
//! ```text
//! SR = C/2 + 1/(1 + L)
//! ```
//!
//! where `C` is the mean local clustering coefficient and `L` the mean
//! shortest-path hop count over reachable pairs. See the crate's `examples/`
//! directory for one runnable program per capability.
//!
//! ```
//! use sarl_core::graph::{structure_reward, ReasoningMap};
//!
//! let triangle = ReasoningMap::from_labels(3, &[0, 1, 2, 0]);
//! assert_eq!(structure_reward(&triangle).sr, 1.0);
//! ```

pub mod cli;
pub mod cluster;
pub mod embed;
pub mod graph;
pub mod mock;
pub mod pipeline;
pub mod seed;
pub mod service;
pub mod trace;
pub mod trainer;

pub use cluster::{ClusterAssignment, ClusterConfig, ClusterMethod, NoisePolicy};
pub use embed::{EmbedderConfig, HashingEncoder, HttpEmbedder, StepEmbedding, StepEncoder};
pub use graph::{structure_reward, ReasoningMap, StructureScore};
pub use pipeline::{ScoreOptions, ScoreRecord, ScoreRequest, ScoreResult, Scorer, TraceSource};
pub use trace::{RawResponse, ReasoningTrace, ThinkMode};
