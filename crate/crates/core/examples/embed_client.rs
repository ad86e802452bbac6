//! Embeds steps through an HTTP embedding endpoint. A local mock server
//! stands in for the real one; point `SARL_EMBED_URL` at your own server to
//! use it instead.
//!
//! ```text
//! cargo run -p sarl-core --example embed_client
//! ```

use std::time::Duration;

use sarl_core::embed::embed_steps;
use sarl_core::mock::{MockEmbeddingServer, MockOptions};
use sarl_core::{EmbedderConfig, HttpEmbedder, StepEncoder};

fn main() {
    let mock = MockEmbeddingServer::start(MockOptions {
        max_latency: Duration::from_millis(20),
        fail_first: 1,
        ..Default::default()
    })
    .expect("mock server");
    let mut cfg = EmbedderConfig::new(mock.url(), "mock-embedder").with_env_overrides();
    cfg.request_batch_size = 4;
    cfg.backoff_base = Duration::from_millis(10);
    let embedder = HttpEmbedder::new(cfg).expect("client");

    let steps: Vec<String> = (0..10)
        .map(|i| format!("reasoning step {}", i % 6))
        .collect();
    let vectors = embed_steps(&steps, &embedder).expect("embed");
    println!(
        "{} steps -> {} unit vectors of dim {}; {} HTTP requests (one retried)",
        steps.len(),
        vectors.len(),
        vectors[0].dim(),
        embedder.requests_sent()
    );
    println!(
        "cosine(step 0, step 6) = {:.4}  (same text)",
        vectors[0].dot(&vectors[6])
    );
    println!(
        "cosine(step 0, step 1) = {:.4}",
        vectors[0].dot(&vectors[1])
    );

    embed_steps(&steps, &embedder).expect("embed again");
    println!(
        "after a repeat call: {} requests (served from cache)",
        embedder.requests_sent()
    );
    println!("probe: {}", embedder.probe());
}
