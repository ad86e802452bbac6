//! Runs the scoring service against a mock embedding endpoint and calls it
//! the way an RL trainer would: one request per rollout group.
//!
//! ```text
//! cargo run -p sarl-core --example reward_server
//! ```

use sarl_core::mock::{MockEmbeddingServer, MockOptions};
use sarl_core::service::{AppState, RunningService, ServiceConfig};
use sarl_core::EmbedderConfig;
use serde_json::{json, Value};

fn main() {
    let mock = MockEmbeddingServer::start(MockOptions::default()).expect("mock embedder");
    let cfg = ServiceConfig {
        bind_addr: "127.0.0.1:0".parse().unwrap(),
        embedder: Some(EmbedderConfig::new(mock.url(), "mock-embedder")),
        ..Default::default()
    };
    let svc = RunningService::start(AppState::new(cfg).expect("state")).expect("service");
    println!("serving on {}", svc.base_url());

    let http = reqwest::blocking::Client::new();
    let health: Value = http
        .get(format!("{}/healthz", svc.base_url()))
        .send()
        .unwrap()
        .json()
        .unwrap();
    println!("healthz: {health}");

    let group: Vec<Value> = (0..4)
        .map(|i| {
            let steps: Vec<String> = (0..6 + i).map(|s| format!("idea {}", (s * (i + 1)) % 4)).collect();
            json!({"id": format!("rollout-{i}"), "text": format!("<think>\n{}\n</think>done", steps.join("\n"))})
        })
        .collect();
    let resp: Value = http
        .post(format!("{}/v1/score", svc.base_url()))
        .json(&json!({"traces": group, "options": {"clustering": "kmeans", "seed": 1}}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    for r in resp["results"].as_array().unwrap() {
        println!(
            "{:<10} SR={:.4} K={} edges={}",
            r["id"].as_str().unwrap(),
            r["sr"],
            r["k"],
            r["num_edges"]
        );
    }

    let metrics = http
        .get(format!("{}/v1/metrics", svc.base_url()))
        .send()
        .unwrap()
        .text()
        .unwrap();
    for line in metrics.lines().filter(|l| !l.starts_with('#')) {
        println!("{line}");
    }
}
