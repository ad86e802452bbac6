mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn sarl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sarl"))
        .args(args)
        .env_remove("SARL_EMBED_URL")
        .env_remove("SARL_EMBED_MODEL")
        .output()
        .expect("run sarl")
}

fn write_lines(dir: &TempDir, name: &str, lines: &[String]) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn text_corpus(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            json!({"id": format!("r{i}"), "text": common::synthetic_text(i, 3 + i % 9)}).to_string()
        })
        .collect()
}

fn read_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn score(input: &Path, output: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "score",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    sarl(&args)
}

#[test]
fn score_writes_one_line_per_record() {
    let dir = TempDir::new().unwrap();
    let input = write_lines(&dir, "in.jsonl", &text_corpus(10));
    let out = dir.path().join("out.jsonl");
    let o = score(&input, &out, &["--hash-embed", "64"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let lines = read_lines(&out);
    assert_eq!(lines.len(), 10);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["id"], format!("r{i}"));
        assert!(l["sr"].as_f64().unwrap() >= 0.0);
        assert!(l.get("timing").is_none());
    }
}

#[test]
fn malformed_line_yields_error_record_and_exit_2() {
    let dir = TempDir::new().unwrap();
    let mut lines = text_corpus(5);
    lines.insert(2, "{\"id\": \"broken\", ".to_owned());
    let input = write_lines(&dir, "in.jsonl", &lines);
    let out = dir.path().join("out.jsonl");
    let o = score(&input, &out, &["--hash-embed", "32"]);
    assert_eq!(o.status.code(), Some(2));
    let records = read_lines(&out);
    assert_eq!(records.len(), 6);
    assert_eq!(records[2]["line"], 3);
    assert!(records[2]["error"]["message"].is_string());

    let manifest: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out.jsonl.manifest.json")).unwrap(),
    )
    .unwrap();
    let counts = &manifest["counts"];
    let total = counts["ok"].as_u64().unwrap() + counts["error"].as_u64().unwrap();
    assert_eq!(total, 6);
    assert_eq!(counts["error"], 1);
    assert!(counts["degenerate"].as_u64().unwrap() <= counts["ok"].as_u64().unwrap());

    let o = score(
        &input,
        &dir.path().join("strict.jsonl"),
        &["--hash-embed", "32", "--strict"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn rerun_and_parallelism_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let input = write_lines(&dir, "in.jsonl", &text_corpus(60));
    for method in ["kmeans", "hdbscan"] {
        let paths: Vec<PathBuf> = ["a", "b", "c"]
            .iter()
            .map(|n| dir.path().join(format!("{method}-{n}")))
            .collect();
        let base = ["--hash-embed", "48", "--seed", "5", "--clustering", method];
        score(
            &input,
            &paths[0],
            &[&base[..], &["--parallelism", "1"]].concat(),
        );
        score(
            &input,
            &paths[1],
            &[&base[..], &["--parallelism", "1"]].concat(),
        );
        score(
            &input,
            &paths[2],
            &[&base[..], &["--parallelism", "8"]].concat(),
        );
        let bytes: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert!(!bytes[0].is_empty());
        assert_eq!(bytes[0], bytes[1], "{method}: rerun differs");
        assert_eq!(bytes[0], bytes[2], "{method}: parallelism changes output");
    }
}

#[test]
fn stats_summarizes_results() {
    let dir = TempDir::new().unwrap();
    let results = |srs: &[(f64, bool)]| -> Vec<String> {
        srs.iter()
            .enumerate()
            .map(|(i, &(sr, degenerate))| {
                json!({"id": i.to_string(), "sr": sr, "local_depth": 0.0, "global_flow": sr, "c": 0.0, "l": null,
                       "degenerate": degenerate, "k": 2, "num_edges": 1, "num_steps": 2, "method": "kmeans",
                       "seed": 0, "assignments": [0, 1]})
                .to_string()
            })
            .collect()
    };
    let path = write_lines(&dir, "r.jsonl", &results(&[(0.4, false), (0.6, false)]));
    let o = sarl(&["stats", "--input", path.to_str().unwrap(), "--csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 2, "{text}");
    let header: Vec<&str> = rows[0].split(',').collect();
    let values: Vec<&str> = rows[1].split(',').collect();
    let get = |k: &str| {
        values[header.iter().position(|h| *h == k).unwrap()]
            .parse::<f64>()
            .unwrap()
    };
    assert!((get("sr_mean") - 0.5).abs() < 1e-12);
    assert_eq!(get("degenerate_fraction"), 0.0);

    let path = write_lines(&dir, "d.jsonl", &results(&[(0.0, true), (0.0, true)]));
    let o = sarl(&["stats", "--input", path.to_str().unwrap(), "--csv"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    let header: Vec<&str> = rows[0].split(',').collect();
    let values: Vec<&str> = rows[1].split(',').collect();
    let i = header
        .iter()
        .position(|h| *h == "degenerate_fraction")
        .unwrap();
    assert_eq!(values[i].parse::<f64>().unwrap(), 1.0);

    let empty = write_lines(&dir, "e.jsonl", &[]);
    std::fs::write(&empty, "").unwrap();
    assert_eq!(
        sarl(&["stats", "--input", empty.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn graph_exports_dot_for_one_trace() {
    let dir = TempDir::new().unwrap();
    let emb: Vec<Vec<f64>> = [0, 1, 2, 0]
        .iter()
        .map(|&l| common::one_hot(l, 3))
        .collect();
    let lines = vec![
        json!({"id": "tri", "steps": ["a", "b", "c", "a"], "embeddings": emb, "meta": {"x": 1}})
            .to_string(),
        json!({"id": "flat", "steps": ["only"], "embeddings": [[1.0, 0.0]]}).to_string(),
    ];
    let input = write_lines(&dir, "in.jsonl", &lines);
    let dot = dir.path().join("g.dot");
    let o = sarl(&[
        "graph",
        "--input",
        input.to_str().unwrap(),
        "--id",
        "tri",
        "--out",
        dot.to_str().unwrap(),
        "--fixed-k",
        "3",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = std::fs::read_to_string(&dot).unwrap();
    assert!(text.starts_with("graph"));
    assert_eq!(text.matches("steps=").count(), 3, "{text}");
    assert_eq!(text.matches(" -- ").count(), 3, "{text}");

    let o = sarl(&[
        "graph",
        "--input",
        input.to_str().unwrap(),
        "--id",
        "flat",
        "--out",
        dot.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read_to_string(&dot)
            .unwrap()
            .matches(" -- ")
            .count(),
        0
    );

    let o = sarl(&[
        "graph",
        "--input",
        input.to_str().unwrap(),
        "--id",
        "missing",
        "--out",
        dot.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn toy_train_writes_a_csv_log() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("log.csv");
    let o = sarl(&[
        "toy-train",
        "--iterations",
        "15",
        "--output",
        log.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 16);
    assert!(text.starts_with("iteration,mean_sr,entropy,max_logit"));
}

#[test]
fn unreachable_embedder_fails_items_not_the_run() {
    let dir = TempDir::new().unwrap();
    let input = write_lines(&dir, "in.jsonl", &text_corpus(2));
    let out = dir.path().join("out.jsonl");
    let url = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}/v1/embeddings", l.local_addr().unwrap())
    };
    let o = score(
        &input,
        &out,
        &["--embed-url", &url, "--embed-retry-budget", "0"],
    );
    assert_eq!(o.status.code(), Some(2));
    for r in read_lines(&out) {
        assert_eq!(r["error"]["code"], "embedder_unavailable");
        assert_eq!(r["error"]["retryable"], true);
    }
}
