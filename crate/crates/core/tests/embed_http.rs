use std::time::Duration;

use sarl_core::embed::{embed_steps, normalize, EmbedError};
use sarl_core::mock::{MockEmbeddingServer, MockOptions};
use sarl_core::{EmbedderConfig, HttpEmbedder, StepEncoder};

fn steps(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("step number {i} of the derivation"))
        .collect()
}

fn client(server: &MockEmbeddingServer, batch: usize) -> HttpEmbedder {
    let mut cfg = EmbedderConfig::new(server.url(), "test-model");
    cfg.request_batch_size = batch;
    cfg.backoff_base = Duration::from_millis(5);
    HttpEmbedder::new(cfg).unwrap()
}

fn assert_close(a: &[f64], b: &[f64]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn batches_requests_at_the_configured_size() {
    let server = MockEmbeddingServer::start(MockOptions::default()).unwrap();
    let enc = client(&server, 2);
    let out = embed_steps(&steps(3), &enc).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(server.requests(), 2);
    assert_eq!(server.inputs(), 3);
}

#[test]
fn order_survives_jitter_and_shuffled_responses() {
    let server = MockEmbeddingServer::start(MockOptions {
        max_latency: Duration::from_millis(30),
        reverse_data: true,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = EmbedderConfig::new(server.url(), "test-model");
    cfg.request_batch_size = 3;
    cfg.max_in_flight = 4;
    let enc = HttpEmbedder::new(cfg).unwrap();
    let input = steps(40);
    let out = embed_steps(&input, &enc).unwrap();
    for (i, (e, text)) in out.iter().zip(&input).enumerate() {
        assert_eq!(e.step_index, i);
        assert_close(&e.vector, &normalize(&server.expected(text)).unwrap());
    }
}

#[test]
fn unnormalized_vectors_come_back_unit_length() {
    let server = MockEmbeddingServer::start(MockOptions {
        scale: 37.5,
        ..Default::default()
    })
    .unwrap();
    let out = embed_steps(&steps(5), &client(&server, 64)).unwrap();
    for e in out {
        let norm = e.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }
}

#[test]
fn transient_failures_are_retried() {
    let server = MockEmbeddingServer::start(MockOptions {
        fail_first: 2,
        ..Default::default()
    })
    .unwrap();
    let enc = client(&server, 64);
    assert_eq!(enc.encode(&steps(4)).unwrap().len(), 4);
    assert_eq!(server.requests(), 3);
}

#[test]
fn exhausted_retries_are_reported_as_retryable() {
    let server = MockEmbeddingServer::start(MockOptions {
        fail_first: 100,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = EmbedderConfig::new(server.url(), "m");
    cfg.retry_budget = 2;
    cfg.backoff_base = Duration::from_millis(1);
    let err = HttpEmbedder::new(cfg)
        .unwrap()
        .encode(&steps(1))
        .unwrap_err();
    assert!(
        matches!(err, EmbedError::Transport { attempts: 3, .. }),
        "{err}"
    );
    assert!(err.is_retryable());
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let url = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}/v1/embeddings", l.local_addr().unwrap())
    };
    let mut cfg = EmbedderConfig::new(url, "m");
    cfg.retry_budget = 1;
    cfg.backoff_base = Duration::from_millis(1);
    let enc = HttpEmbedder::new(cfg).unwrap();
    assert!(matches!(
        enc.encode(&steps(2)),
        Err(EmbedError::Transport { .. })
    ));
    assert!(!enc.probe());
}

#[test]
fn cache_answers_repeated_steps() {
    let server = MockEmbeddingServer::start(MockOptions::default()).unwrap();
    let enc = client(&server, 64);
    let mut input = steps(3);
    input.push(input[0].clone());
    enc.encode(&input).unwrap();
    assert_eq!(server.inputs(), 3, "duplicates are fetched once");
    enc.encode(&input).unwrap();
    assert_eq!(server.requests(), 1, "second call served from cache");
}

#[test]
fn probe_bypasses_the_cache() {
    let server = MockEmbeddingServer::start(MockOptions::default()).unwrap();
    let enc = client(&server, 64);
    assert!(enc.probe());
    assert!(enc.probe());
    assert_eq!(server.requests(), 2);
}

#[test]
fn empty_step_list_is_rejected() {
    let server = MockEmbeddingServer::start(MockOptions::default()).unwrap();
    assert!(matches!(
        embed_steps(&[], &client(&server, 4)),
        Err(EmbedError::EmptyInput)
    ));
    assert_eq!(server.requests(), 0);
}
