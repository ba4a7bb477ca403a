use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::thread;

use serde_json::{json, Value};

fn wser(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wser"))
        .args(args)
        .current_dir(dir)
        .env_remove("WSER_SIDECAR_ADDR")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = wser(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn synth(dir: &Path, name: &str, n: &str, seed: &str) {
    ok(
        dir,
        &[
            "synth-corpus", "--labels", "anger,joy,sadness,neutral", "--num-utterances", n, "--seed", seed,
            "--id-prefix", name, "--out-dir", name,
        ],
    );
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&wser(d, &[])), 2);
    assert_eq!(code(&wser(d, &["no-such-command"])), 2);
    assert_eq!(code(&wser(d, &["label", "--bogus-flag"])), 2);
    assert_eq!(code(&wser(d, &["label", "--out", "x.jsonl"])), 2);
    assert_eq!(code(&wser(d, &["label", "--manifest", "m.jsonl", "--out", "x.jsonl"])), 2);
    assert_eq!(code(&wser(d, &["label", "--manifest", "m.jsonl", "--scorer", "nli:x", "--out", "x"])), 2);

    std::fs::write(d.join("bad.toml"), "manifest = \"m.jsonl\"\nunknown_key = 3\n").unwrap();
    assert_eq!(code(&wser(d, &["--config", "bad.toml", "label"])), 2);
    std::fs::write(d.join("other.toml"), "command = \"pretrain\"\n").unwrap();
    assert_eq!(code(&wser(d, &["--config", "other.toml", "label"])), 2);
}

#[test]
fn invalid_fraction_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "down", "40", "1");
    let out = wser(d, &["finetune", "--manifest", "down/manifest.jsonl", "--fraction", "0.25", "--out", "ft.ckpt"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("0.25"));
    assert!(!d.join("ft.ckpt").exists());
}

#[test]
fn evaluate_rejects_mismatched_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("p.txt"), "joy\nanger\n").unwrap();
    std::fs::write(d.join("r.txt"), "joy\n").unwrap();
    std::fs::write(d.join("t.txt"), "anger\njoy\n").unwrap();
    let args = ["evaluate", "--predictions", "p.txt", "--references", "r.txt", "--taxonomy", "t.txt", "--out", "ev"];
    assert_eq!(code(&wser(d, &args)), 1);

    std::fs::write(d.join("r.txt"), "joy\njoy\n").unwrap();
    ok(d, &args);
    let report: Value = serde_json::from_str(std::fs::read_to_string(d.join("ev/report.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(report["unweighted_accuracy"], json!(0.5));
}

#[test]
fn end_to_end_pipeline_and_snapshot_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "pre", "200", "3");
    synth(d, "down", "80", "4");
    ok(d, &["label", "--manifest", "pre/manifest.jsonl", "--scorer", "lexicon:pre/lexicon.tsv", "--out", "weak.jsonl"]);
    assert_eq!(std::fs::read_to_string(d.join("weak.jsonl")).unwrap().lines().count(), 200);

    let pre = ["pretrain", "--manifest", "pre/manifest.jsonl", "--weak-labels", "weak.jsonl", "--architecture", "linear", "--steps", "60", "--out", "pre.ckpt"];
    assert_eq!(ok(d, &pre), "pre.ckpt");
    assert!(d.join("pre.ckpt.log.jsonl").exists());
    let snapshot = std::fs::read_to_string(d.join("pre.ckpt.resolved.toml")).unwrap();
    assert!(snapshot.contains("command = \"pretrain\""));

    // replaying the snapshot with only the output changed reproduces the checkpoint
    ok(d, &["--config", "pre.ckpt.resolved.toml", "pretrain", "--out", "again.ckpt"]);
    assert_eq!(std::fs::read(d.join("pre.ckpt")).unwrap(), std::fs::read(d.join("again.ckpt")).unwrap());
    // flags override the file
    ok(d, &["--config", "pre.ckpt.resolved.toml", "pretrain", "--steps", "30", "--out", "short.ckpt"]);
    assert!(std::fs::read_to_string(d.join("short.ckpt.resolved.toml")).unwrap().contains("steps = 30"));

    ok(d, &["finetune", "--manifest", "down/manifest.jsonl", "--checkpoint", "pre.ckpt", "--fraction", "0.5", "--steps", "40", "--out", "ft.ckpt"]);
    assert!(d.join("ft.ckpt.split.json").exists());
    ok(d, &["evaluate", "--checkpoint", "ft.ckpt", "--manifest", "down/manifest.jsonl", "--split", "ft.ckpt.split.json", "--out", "ev"]);
    for f in ["report.jsonl", "confusion.csv", "report.txt"] {
        assert!(d.join("ev").join(f).exists(), "{f}");
    }
    ok(d, &["zero-shot", "--checkpoint", "pre.ckpt", "--manifest", "down/manifest.jsonl", "--split", "ft.ckpt.split.json", "--out", "zs"]);
    ok(d, &["baseline", "--kind", "majority", "--manifest", "down/manifest.jsonl", "--split", "ft.ckpt.split.json", "--out", "maj"]);
    ok(d, &["sweep-prompts", "--manifest", "down/manifest.jsonl", "--scorer", "lexicon:down/lexicon.tsv", "--out", "sweep"]);
    assert_eq!(std::fs::read_to_string(d.join("sweep/prompts.jsonl")).unwrap().lines().count(), 11);
}

/// Minimal sidecar answering the info probe and scoring every pair 0.5.
fn mock_sidecar() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request = String::new();
            reader.read_line(&mut request).unwrap();
            let mut length = 0;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                if h.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let text = if request.starts_with("GET") {
                json!({"model_id": "mock", "max_batch": 64, "taxonomy_agnostic": true}).to_string()
            } else {
                let v: Value = serde_json::from_slice(&body).unwrap();
                let n = v["pairs"].as_array().unwrap().len();
                json!({"scores": vec![0.5; n], "model_id": "mock"}).to_string()
            };
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    });
    addr
}

#[test]
fn remote_scorer_address_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "c", "10", "5");
    let addr = mock_sidecar();
    let out = Command::new(env!("CARGO_BIN_EXE_wser"))
        .args(["label", "--manifest", "c/manifest.jsonl", "--out", "weak.jsonl"])
        .current_dir(d)
        .env("WSER_SIDECAR_ADDR", &addr)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.join("weak.jsonl")).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    // all scores tie, so the first taxonomy label wins
    assert_eq!(first["label"], json!("anger"));
    assert_eq!(first["scorer_id"], json!("remote:mock"));
    assert_eq!(text.lines().count(), 10);
}
