//! Scores a JSONL corpus in parallel with deterministic, ordered output.
//!
//! ```text
//! cargo run -p sarl-core --example score_corpus [corpus.jsonl]
//! ```
//!
//! Without an argument a small built-in corpus is scored. Steps are
//! embedded locally with the hashing encoder.

use std::sync::Arc;

use sarl_core::pipeline::ScoreRecord;
use sarl_core::trace::read_corpus;
use sarl_core::{ClusterMethod, HashingEncoder, RawResponse, ScoreOptions, ScoreRequest, Scorer};

fn builtin() -> Vec<RawResponse> {
    vec![
        RawResponse::from_text(
            "revisits",
            "<think>\nDefine the sequence\nCompute the first terms\nSpot the pattern\n\
             Compute the first terms again\nDefine the sequence formally\nSpot the pattern\n</think>42",
        ),
        RawResponse::from_text("linear", "<think>\nRead the question\nApply the formula\nWrite the answer\n</think>7"),
        RawResponse::from_text("empty", "No reasoning at all."),
        RawResponse::from_steps("pre-split", vec!["a first idea".into(), "a second idea".into(), "a first idea".into()]),
    ]
}

fn main() {
    let raws = match std::env::args().nth(1) {
        Some(path) => read_corpus(&path, false)
            .expect("corpus")
            .into_iter()
            .filter_map(|(_, item)| item.ok())
            .collect(),
        None => builtin(),
    };
    let opts = ScoreOptions {
        clustering: ClusterMethod::KMeans,
        seed: 7,
        ..Default::default()
    };
    let reqs: Vec<ScoreRequest> = raws
        .into_iter()
        .map(|r| ScoreRequest::from_raw(r, &opts))
        .collect();
    let scorer = Scorer::new(Arc::new(HashingEncoder::new(256)));
    for (req, outcome) in reqs.iter().zip(scorer.score_batch(&reqs, 4)) {
        let record = ScoreRecord::from_outcome(&req.id, outcome.map(|r| r.without_timing()));
        println!("{}", serde_json::to_string(&record).unwrap());
    }
}
