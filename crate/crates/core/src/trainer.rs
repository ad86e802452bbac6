//! A desk-scale structure-aware RL loop.
//!
//! A first-order Markov policy over latent reasoning types stands in for a
//! language model: it samples type sequences, each sequence is scored by the
//! Structure Reward, rewards are standardized within the group, and the
//! logits follow plain REINFORCE. No labels or answers are involved.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterAssignment, ClusterMethod};
use crate::graph::{structure_reward, ReasoningMap};
use crate::pipeline::{ScoreOptions, ScoreRequest, Scorer, TraceSource};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite logits after iteration {iteration} (max |logit| {max_abs})")]
    NonFinite { iteration: usize, max_abs: f64 },
    #[error("scoring failed at iteration {iteration}: {message}")]
    Scoring { iteration: usize, message: String },
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at(logits: &[f64], i: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[i] - lse
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

fn sample(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last type with mass
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Logits of a Markov chain over `n_types` latent types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub n_types: usize,
    pub init_logits: Vec<f64>,
    /// Row `i` holds the logits of the type following type `i`.
    pub trans_logits: Vec<Vec<f64>>,
    pub horizon: usize,
}

/// Gradient with the same shape as a policy's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub init: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
}

impl PolicyGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            init: vec![0.0; n],
            trans: vec![vec![0.0; n]; n],
        }
    }

    fn add_scaled(&mut self, other: &PolicyGrad, scale: f64) {
        for (a, b) in self.init.iter_mut().zip(&other.init) {
            *a += scale * b;
        }
        for (ra, rb) in self.trans.iter_mut().zip(&other.trans) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += scale * b;
            }
        }
    }

    /// Flat coordinate view: init logits first, then transition rows.
    pub fn get(&self, coord: usize) -> f64 {
        let n = self.init.len();
        if coord < n {
            self.init[coord]
        } else {
            let c = coord - n;
            self.trans[c / n][c % n]
        }
    }
}

impl TabularPolicy {
    /// All-zero logits: uniform start and transitions.
    pub fn uniform(n_types: usize, horizon: usize) -> Self {
        Self {
            n_types,
            init_logits: vec![0.0; n_types],
            trans_logits: vec![vec![0.0; n_types]; n_types],
            horizon,
        }
    }

    pub fn num_params(&self) -> usize {
        self.n_types * (self.n_types + 1)
    }

    pub fn param_mut(&mut self, coord: usize) -> &mut f64 {
        let n = self.n_types;
        if coord < n {
            &mut self.init_logits[coord]
        } else {
            let c = coord - n;
            &mut self.trans_logits[c / n][c % n]
        }
    }

    pub fn rollout(&self, rng: &mut impl Rng) -> Vec<usize> {
        let mut seq = Vec::with_capacity(self.horizon);
        if self.horizon == 0 {
            return seq;
        }
        let mut z = sample(&softmax(&self.init_logits), rng);
        seq.push(z);
        for _ in 1..self.horizon {
            z = sample(&softmax(&self.trans_logits[z]), rng);
            seq.push(z);
        }
        seq
    }

    pub fn rollout_seeded(&self, seed: u64) -> Vec<usize> {
        self.rollout(&mut seed::rng(seed))
    }

    pub fn log_prob(&self, seq: &[usize]) -> f64 {
        let Some(&first) = seq.first() else {
            return 0.0;
        };
        let mut lp = log_softmax_at(&self.init_logits, first);
        for w in seq.windows(2) {
            lp += log_softmax_at(&self.trans_logits[w[0]], w[1]);
        }
        lp
    }

    /// ∇ log π(seq) with respect to every logit.
    pub fn grad_log_prob(&self, seq: &[usize]) -> PolicyGrad {
        let n = self.n_types;
        let mut g = PolicyGrad::zeros(n);
        let Some(&first) = seq.first() else {
            return g;
        };
        for (gi, p) in g.init.iter_mut().zip(softmax(&self.init_logits)) {
            *gi -= p;
        }
        g.init[first] += 1.0;
        for w in seq.windows(2) {
            let row = &mut g.trans[w[0]];
            for (gi, p) in row.iter_mut().zip(softmax(&self.trans_logits[w[0]])) {
                *gi -= p;
            }
            row[w[1]] += 1.0;
        }
        g
    }

    /// Mean entropy over the start distribution and every transition row.
    pub fn mean_entropy(&self) -> f64 {
        let rows = std::iter::once(&self.init_logits).chain(&self.trans_logits);
        rows.map(|r| entropy(&softmax(r))).sum::<f64>() / (self.n_types + 1) as f64
    }

    pub fn max_logit(&self) -> f64 {
        self.init_logits
            .iter()
            .chain(self.trans_logits.iter().flatten())
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn max_abs_logit(&self) -> f64 {
        self.init_logits
            .iter()
            .chain(self.trans_logits.iter().flatten())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    fn all_finite(&self) -> bool {
        self.init_logits
            .iter()
            .chain(self.trans_logits.iter().flatten())
            .all(|x| x.is_finite())
    }

    fn ascend(&mut self, grad: &PolicyGrad, lr: f64) {
        for (l, g) in self.init_logits.iter_mut().zip(&grad.init) {
            *l += lr * g;
        }
        for (row, grow) in self.trans_logits.iter_mut().zip(&grad.trans) {
            for (l, g) in row.iter_mut().zip(grow) {
                *l += lr * g;
            }
        }
    }
}

/// Group-standardized advantages `(r - mean) / (std + eps)`. When the std is
/// below `eps * 1e-3` every advantage is 0.
pub fn group_advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    group_advantages_with(rewards, eps, true)
}

/// As [`group_advantages`]; `population = false` uses the `G - 1` std.
pub fn group_advantages_with(rewards: &[f64], eps: f64, population: bool) -> Vec<f64> {
    let g = rewards.len();
    if g == 0 {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let denom = if population || g < 2 { g } else { g - 1 } as f64;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / denom).sqrt();
    if std < eps * 1e-3 {
        return vec![0.0; g];
    }
    rewards.iter().map(|r| (r - mean) / (std + eps)).collect()
}

/// How rollouts are turned into rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum RewardMode {
    /// Sampled types are used directly as the cluster assignment.
    LabelsDirect,
    /// Each step becomes a one-hot embedding of its type plus Gaussian
    /// noise, and goes through the full embed → cluster → map pipeline.
    FullPipeline { noise: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_types: usize,
    pub horizon: usize,
    pub group_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub adv_eps: f64,
    pub population_std: bool,
    pub mode: RewardMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_types: 5,
            horizon: 12,
            group_size: 8,
            learning_rate: 0.1,
            iterations: 300,
            seed: 0,
            adv_eps: 1e-8,
            population_std: true,
            mode: RewardMode::LabelsDirect,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.group_size < 2 {
            return bad("group size must be >= 2");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning rate must be finite and >= 0");
        }
        if self.adv_eps.is_nan() || self.adv_eps <= 0.0 {
            return bad("advantage epsilon must be > 0");
        }
        if self.n_types < 2 {
            return bad("need at least 2 latent types");
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if let RewardMode::FullPipeline { noise } = self.mode {
            if !noise.is_finite() || noise < 0.0 {
                return bad("embedding noise must be finite and >= 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub mean_sr: f64,
    pub entropy: f64,
    pub max_logit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub iterations: Vec<IterationLog>,
    /// Rewards of every rollout, one row per iteration.
    pub rewards: Vec<Vec<f64>>,
    pub policy: TabularPolicy,
}

impl TrainingLog {
    /// Mean of `mean_sr` over iterations `range`.
    pub fn window_mean(&self, range: std::ops::Range<usize>) -> f64 {
        let rows = &self.iterations[range];
        rows.iter().map(|r| r.mean_sr).sum::<f64>() / rows.len() as f64
    }

    /// Last-`w` window mean minus first-`w` window mean.
    pub fn improvement(&self, w: usize) -> f64 {
        let n = self.iterations.len();
        let w = w.min(n);
        self.window_mean(n - w..n) - self.window_mean(0..w)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.iterations {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Structure Reward of a sampled type sequence, with the sequence itself
/// taken as the cluster assignment.
pub fn labels_reward(seq: &[usize]) -> f64 {
    let a = ClusterAssignment::from_raw_labels(seq, ClusterMethod::KMeans, 0);
    structure_reward(&ReasoningMap::from_assignment(&a)).sr
}

struct RewardFn {
    mode: RewardMode,
    scorer: Scorer,
    opts: ScoreOptions,
    n_types: usize,
}

impl RewardFn {
    fn new(cfg: &TrainConfig) -> Self {
        let opts = ScoreOptions {
            clustering: ClusterMethod::KMeans,
            seed: cfg.seed,
            fixed_k: Some(cfg.n_types),
            ..ScoreOptions::default()
        };
        Self {
            mode: cfg.mode,
            scorer: Scorer::offline(),
            opts,
            n_types: cfg.n_types,
        }
    }

    fn rewards(
        &self,
        iteration: usize,
        seqs: &[Vec<usize>],
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>, TrainError> {
        match self.mode {
            RewardMode::LabelsDirect => Ok(seqs.iter().map(|s| labels_reward(s)).collect()),
            RewardMode::FullPipeline { noise } => {
                let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid normal");
                let reqs: Vec<ScoreRequest> = seqs
                    .iter()
                    .enumerate()
                    .map(|(g, seq)| {
                        let steps = seq.iter().map(|t| format!("type {t}")).collect();
                        let embeddings = seq
                            .iter()
                            .map(|&t| {
                                (0..self.n_types)
                                    .map(|j| {
                                        let base = if j == t { 1.0 } else { 0.0 };
                                        if noise > 0.0 {
                                            base + normal.sample(rng)
                                        } else {
                                            base
                                        }
                                    })
                                    .collect()
                            })
                            .collect();
                        ScoreRequest::new(
                            format!("it{iteration}-g{g}"),
                            TraceSource::StepsWithEmbeddings { steps, embeddings },
                            &self.opts,
                        )
                    })
                    .collect();
                self.scorer
                    .score_batch(&reqs, 1)
                    .into_iter()
                    .map(|r| {
                        r.map(|r| r.score.sr).map_err(|e| TrainError::Scoring {
                            iteration,
                            message: e.to_string(),
                        })
                    })
                    .collect()
            }
        }
    }
}

/// Runs group-normalized REINFORCE against the Structure Reward.
pub fn train(cfg: &TrainConfig) -> Result<TrainingLog, TrainError> {
    cfg.validate()?;
    let mut policy = TabularPolicy::uniform(cfg.n_types, cfg.horizon);
    let reward_fn = RewardFn::new(cfg);
    let mut rollout_rng = seed::rng(cfg.seed);
    let mut noise_rng = seed::rng(seed::mix(cfg.seed, 0x006e_6f69_7365));
    let mut log = TrainingLog {
        iterations: Vec::with_capacity(cfg.iterations),
        rewards: Vec::with_capacity(cfg.iterations),
        policy: policy.clone(),
    };

    for iteration in 0..cfg.iterations {
        let seqs: Vec<Vec<usize>> = (0..cfg.group_size)
            .map(|_| policy.rollout(&mut rollout_rng))
            .collect();
        let rewards = reward_fn.rewards(iteration, &seqs, &mut noise_rng)?;
        let adv = group_advantages_with(&rewards, cfg.adv_eps, cfg.population_std);

        let mut grad = PolicyGrad::zeros(cfg.n_types);
        for (seq, a) in seqs.iter().zip(&adv) {
            if *a != 0.0 {
                grad.add_scaled(&policy.grad_log_prob(seq), *a);
            }
        }
        policy.ascend(&grad, cfg.learning_rate);
        if !policy.all_finite() {
            return Err(TrainError::NonFinite {
                iteration,
                max_abs: policy.max_abs_logit(),
            });
        }

        let entropy = policy.mean_entropy();
        let mean_sr = rewards.iter().sum::<f64>() / rewards.len() as f64;
        tracing::trace!(iteration, mean_sr, entropy, "toy-train step");
        log.iterations.push(IterationLog {
            iteration,
            mean_sr,
            entropy,
            max_logit: policy.max_logit(),
        });
        log.rewards.push(rewards);
    }
    log.policy = policy;
    Ok(log)
}
