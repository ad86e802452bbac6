//! Command-line front end: batch scoring, corpus statistics, graph export,
//! the scoring service and the toy trainer.
//!
//! Exit codes: 0 success, 1 fatal error, 2 when `score` finished but some
//! items failed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterMethod, NoisePolicy};
use crate::embed::{EmbedderConfig, HashingEncoder, HttpEmbedder, StepEncoder};
use crate::pipeline::{ErrorRecord, ScoreOptions, ScoreRecord, ScoreRequest, ScoreResult, Scorer};
use crate::service::{AppState, ServiceConfig};
use crate::trace::{CorpusReader, ThinkMode};
use crate::trainer::{train, RewardMode, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_ITEM_ERRORS: i32 = 2;

/// Corpus records scored per batch; bounds memory on large inputs.
const CHUNK: usize = 1024;

#[derive(Debug, Parser)]
#[command(
    name = "sarl",
    version,
    about = "Structure Reward scoring for chain-of-thought traces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a JSONL corpus, one result line per input line.
    Score(ScoreArgs),
    /// Summarize a file of score results.
    Stats(StatsArgs),
    /// Export one trace's reasoning map as Graphviz DOT.
    Graph(GraphArgs),
    /// Run the HTTP scoring service.
    Serve(ServeArgs),
    /// Train a tabular policy against the Structure Reward.
    ToyTrain(ToyTrainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClusteringArg {
    Kmeans,
    Hdbscan,
}

impl From<ClusteringArg> for ClusterMethod {
    fn from(c: ClusteringArg) -> Self {
        match c {
            ClusteringArg::Kmeans => ClusterMethod::KMeans,
            ClusteringArg::Hdbscan => ClusterMethod::Hdbscan,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Merged,
    Singletons,
}

/// Options shared by every command that scores traces.
#[derive(Debug, Clone, Args)]
pub struct ScoringArgs {
    #[arg(long, value_enum, default_value = "kmeans")]
    pub clustering: ClusteringArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "SARL_EMBED_URL")]
    pub embed_url: Option<String>,
    #[arg(long, env = "SARL_EMBED_MODEL")]
    pub embed_model: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub embed_batch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub embed_max_in_flight: usize,
    #[arg(long, default_value_t = 3)]
    pub embed_retry_budget: u32,
    /// Embed locally with a hashed n-gram encoder of this dimension instead
    /// of calling an embedding server. Takes precedence over --embed-url.
    #[arg(long)]
    pub hash_embed: Option<usize>,
    /// Treat traces without a think tag as empty instead of scoring the
    /// whole text.
    #[arg(long)]
    pub tagless_empty: bool,
    /// Use this many KMeans clusters instead of round(sqrt(steps)).
    #[arg(long)]
    pub fixed_k: Option<usize>,
    #[arg(long, value_enum, default_value = "merged")]
    pub noise_policy: NoiseArg,
    #[arg(long, default_value_t = 0.0)]
    pub degenerate_reward: f64,
}

impl ScoringArgs {
    pub fn options(&self) -> ScoreOptions {
        ScoreOptions {
            clustering: self.clustering.into(),
            seed: self.seed,
            noise_policy: match self.noise_policy {
                NoiseArg::Merged => NoisePolicy::Merged,
                NoiseArg::Singletons => NoisePolicy::Singletons,
            },
            think_mode: if self.tagless_empty {
                ThinkMode::Empty
            } else {
                ThinkMode::WholeText
            },
            degenerate_reward: self.degenerate_reward,
            fixed_k: self.fixed_k,
            ..ScoreOptions::default()
        }
    }

    pub fn embedder_config(&self) -> Option<EmbedderConfig> {
        let url = self.embed_url.clone()?;
        let mut cfg = EmbedderConfig::new(url, EmbedderConfig::default().model_name);
        if let Some(m) = &self.embed_model {
            cfg.model_name = m.clone();
        }
        cfg.request_batch_size = self.embed_batch_size;
        cfg.max_in_flight = self.embed_max_in_flight;
        cfg.retry_budget = self.embed_retry_budget;
        Some(cfg)
    }

    pub fn scorer(&self) -> Result<Scorer> {
        if let Some(dim) = self.hash_embed {
            if dim < 2 {
                bail!("--hash-embed needs a dimension of at least 2");
            }
            return Ok(Scorer::new(Arc::new(HashingEncoder::new(dim))));
        }
        match self.embedder_config() {
            Some(cfg) => {
                let enc: Arc<dyn StepEncoder> = Arc::new(HttpEmbedder::new(cfg)?);
                Ok(Scorer::new(enc))
            }
            None => Ok(Scorer::offline()),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    /// Abort on the first malformed line or duplicate id.
    #[arg(long)]
    pub strict: bool,
    /// Include per-stage timings (makes output non-reproducible).
    #[arg(long)]
    pub timings: bool,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Print a single CSV header and data row instead of a table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub id: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// `key = value` config file, applied over the environment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Labels,
    Pipeline,
}

#[derive(Debug, Clone, Args)]
pub struct ToyTrainArgs {
    #[arg(long, default_value_t = 5)]
    pub n_types: usize,
    #[arg(long, default_value_t = 12)]
    pub horizon: usize,
    #[arg(long, default_value_t = 8)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 300)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub adv_eps: f64,
    /// Use the `G - 1` standard deviation for advantages.
    #[arg(long)]
    pub sample_std: bool,
    #[arg(long, value_enum, default_value = "labels")]
    pub mode: ModeArg,
    /// Embedding noise in pipeline mode.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// CSV log destination; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl ToyTrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            n_types: self.n_types,
            horizon: self.horizon,
            group_size: self.group_size,
            learning_rate: self.lr,
            iterations: self.iterations,
            seed: self.seed,
            adv_eps: self.adv_eps,
            population_std: !self.sample_std,
            mode: match self.mode {
                ModeArg::Labels => RewardMode::LabelsDirect,
                ModeArg::Pipeline => RewardMode::FullPipeline { noise: self.noise },
            },
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let res = match cli.command {
        Command::Score(a) => cmd_score(&a),
        Command::Stats(a) => cmd_stats(&a, &mut std::io::stdout().lock()),
        Command::Graph(a) => cmd_graph(&a),
        Command::Serve(a) => cmd_serve(&a),
        Command::ToyTrain(a) => cmd_toy_train(&a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FATAL
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub ok: usize,
    pub degenerate: usize,
    pub error: usize,
}

impl RunCounts {
    pub fn total(&self) -> usize {
        self.ok + self.degenerate + self.error
    }
}

/// Written next to the `score` output as `<output>.manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub input: PathBuf,
    pub output: PathBuf,
    pub options: ScoreOptions,
    pub embedder: Option<EmbedderConfig>,
    pub parallelism: usize,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub counts: RunCounts,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn cmd_score(args: &ScoreArgs) -> Result<i32> {
    let started_at = Utc::now();
    let scorer = args.scoring.scorer()?;
    let opts = args.scoring.options();
    let mut reader = CorpusReader::open(&args.input, args.strict)?;
    let file = File::create(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    let mut out = BufWriter::new(file);
    let mut counts = RunCounts::default();

    loop {
        let mut chunk = Vec::with_capacity(CHUNK);
        for item in reader.by_ref().take(CHUNK) {
            chunk.push(item?);
        }
        if chunk.is_empty() {
            break;
        }
        let reqs: Vec<ScoreRequest> = chunk
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok())
            .map(|raw| ScoreRequest::from_raw(raw.clone(), &opts))
            .collect();
        let mut scored = scorer
            .score_batch(&reqs, args.parallelism)
            .into_iter()
            .zip(&reqs);
        for (line, item) in chunk {
            let record = match item {
                Ok(_) => {
                    let (outcome, req) = scored.next().expect("one outcome per valid line");
                    let outcome =
                        outcome.map(|r| if args.timings { r } else { r.without_timing() });
                    ScoreRecord::from_outcome(&req.id, outcome)
                }
                Err(e) => ScoreRecord::Err(ErrorRecord {
                    id: e.id.clone(),
                    line: Some(line),
                    error: crate::pipeline::ItemError::new(
                        crate::pipeline::ErrorCode::InvalidRequest,
                        e.to_string(),
                    ),
                }),
            };
            match &record {
                ScoreRecord::Ok(r) if r.score.degenerate => counts.degenerate += 1,
                ScoreRecord::Ok(_) => counts.ok += 1,
                ScoreRecord::Err(_) => counts.error += 1,
            }
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;

    let manifest = RunManifest {
        input: args.input.clone(),
        output: args.output.clone(),
        options: opts,
        embedder: args.scoring.embedder_config(),
        parallelism: args.parallelism,
        started_at,
        finished_at: Utc::now(),
        counts,
    };
    let mpath = manifest_path(&args.output);
    std::fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?)
        .with_context(|| format!("writing {}", mpath.display()))?;
    eprintln!(
        "scored {} traces: {} ok, {} degenerate, {} errors",
        counts.total(),
        counts.ok,
        counts.degenerate,
        counts.error
    );
    Ok(if counts.error > 0 {
        EXIT_ITEM_ERRORS
    } else {
        EXIT_OK
    })
}

/// Mean, median and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        } else {
            sorted[mid]
        };
        Some(Self { mean, median, std })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub count: usize,
    pub errors: usize,
    pub degenerate_fraction: f64,
    /// `(name, summary)` for sr, c, l, num_steps, num_nodes, num_edges.
    pub fields: Vec<(&'static str, Option<Summary>)>,
}

pub fn corpus_stats(results: &[ScoreResult], errors: usize) -> CorpusStats {
    let col =
        |f: &dyn Fn(&ScoreResult) -> Option<f64>| results.iter().filter_map(f).collect::<Vec<_>>();
    let degenerate = results.iter().filter(|r| r.score.degenerate).count();
    CorpusStats {
        count: results.len(),
        errors,
        degenerate_fraction: degenerate as f64 / results.len().max(1) as f64,
        fields: vec![
            ("sr", Summary::of(&col(&|r| Some(r.score.sr)))),
            ("c", Summary::of(&col(&|r| Some(r.score.c)))),
            ("l", Summary::of(&col(&|r| r.score.l))),
            (
                "num_steps",
                Summary::of(&col(&|r| Some(r.num_steps as f64))),
            ),
            ("num_nodes", Summary::of(&col(&|r| Some(r.k as f64)))),
            (
                "num_edges",
                Summary::of(&col(&|r| Some(r.num_edges as f64))),
            ),
        ],
    }
}

pub fn cmd_stats(args: &StatsArgs, out: &mut dyn Write) -> Result<i32> {
    let file =
        File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let mut results = Vec::new();
    let mut errors = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ScoreRecord>(&line)
            .with_context(|| format!("line {}", i + 1))?
        {
            ScoreRecord::Ok(r) => results.push(r),
            ScoreRecord::Err(_) => errors += 1,
        }
    }
    if results.is_empty() {
        bail!("no score results in {}", args.input.display());
    }
    let stats = corpus_stats(&results, errors);

    if args.csv {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "count".to_owned(),
            "errors".to_owned(),
            "degenerate_fraction".to_owned(),
        ];
        let mut row = vec![
            stats.count.to_string(),
            stats.errors.to_string(),
            stats.degenerate_fraction.to_string(),
        ];
        for (name, s) in &stats.fields {
            for (stat, v) in [
                ("mean", s.map(|s| s.mean)),
                ("median", s.map(|s| s.median)),
                ("std", s.map(|s| s.std)),
            ] {
                header.push(format!("{name}_{stat}"));
                row.push(v.map(|v| v.to_string()).unwrap_or_default());
            }
        }
        w.write_record(&header)?;
        w.write_record(&row)?;
        w.flush()?;
    } else {
        writeln!(out, "count               {}", stats.count)?;
        writeln!(out, "errors              {}", stats.errors)?;
        writeln!(out, "degenerate_fraction {:.6}", stats.degenerate_fraction)?;
        writeln!(
            out,
            "{:<10} {:>12} {:>12} {:>12}",
            "field", "mean", "median", "std"
        )?;
        for (name, s) in &stats.fields {
            match s {
                Some(s) => writeln!(
                    out,
                    "{name:<10} {:>12.6} {:>12.6} {:>12.6}",
                    s.mean, s.median, s.std
                )?,
                None => writeln!(out, "{name:<10} {:>12} {:>12} {:>12}", "-", "-", "-")?,
            }
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_graph(args: &GraphArgs) -> Result<i32> {
    let scorer = args.scoring.scorer()?;
    let opts = args.scoring.options();
    let raw = CorpusReader::open(&args.input, false)?
        .filter_map(|item| item.ok().and_then(|(_, r)| r.ok()))
        .find(|r| r.id == args.id)
        .ok_or_else(|| anyhow!("id `{}` not found in {}", args.id, args.input.display()))?;
    let scored = scorer.score_detailed(&ScoreRequest::from_raw(raw, &opts))?;
    std::fs::write(&args.out, scored.map.to_dot(&args.id))
        .with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!(
        "{}: {} nodes, {} edges, sr {:.6}",
        args.id,
        scored.map.num_nodes(),
        scored.map.num_edges(),
        scored.result.score.sr
    );
    Ok(EXIT_OK)
}

pub fn cmd_serve(args: &ServeArgs) -> Result<i32> {
    let mut cfg = ServiceConfig::from_env()?;
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    if let Some(bind) = &args.bind {
        cfg.set("bind_addr", bind)?;
    }
    let state = Arc::new(AppState::new(cfg.clone())?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(cfg.bind_addr).await?;
        tracing::info!(addr = %listener.local_addr()?, "serving");
        crate::service::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(EXIT_OK)
}

pub fn cmd_toy_train(args: &ToyTrainArgs) -> Result<i32> {
    let cfg = args.config();
    let log = train(&cfg)?;
    match &args.output {
        Some(path) => log.write_csv(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )?,
        None => log.write_csv(std::io::stdout().lock())?,
    }
    let w = 20.min(log.iterations.len());
    eprintln!(
        "mean SR: first {w} iterations {:.4}, last {w} iterations {:.4}",
        log.window_mean(0..w),
        log.window_mean(log.iterations.len() - w..log.iterations.len())
    );
    Ok(EXIT_OK)
}
