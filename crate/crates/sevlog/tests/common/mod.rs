//! Synthetic corpus generation shared by the integration and acceptance
//! suites: source trees full of log instructions over two disjoint
//! vocabularies, plus target-system log files with injected anomalies.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NORMAL_WORDS: &[&str] = &[
    "server", "worker", "thread", "request", "response", "connection", "session", "cache",
    "replica", "snapshot", "checkpoint", "heartbeat", "started", "starting", "completed",
    "finished", "accepted", "registered", "synced", "flushed", "loaded", "saved", "allocated",
    "scheduled", "received", "verified", "committed", "replicated", "initialized", "resumed",
    "healthy", "cluster", "node", "queue", "buffer", "stream", "index", "partition", "segment",
    "listening",
];

pub const ABNORMAL_WORDS: &[&str] = &[
    "panic", "corruption", "crash", "failure", "exception", "unreachable", "refused",
    "denied", "aborted", "overflow", "deadlock", "leak", "violation", "unrecoverable",
    "failed", "broken", "stalled", "poisoned", "rejected", "inconsistent", "mismatch",
    "fault", "corrupted", "fatal", "oops", "lockup", "starvation", "desync", "hosed",
    "wedged",
];

fn sentence(pool: &[&str], rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(4..9);
    (0..len)
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes a three-language source tree holding `n_info` info-level and
/// `n_error` error/fatal/critical-level log instructions.
pub fn write_source_tree(dir: &Path, n_info: usize, n_error: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fs::create_dir_all(dir).unwrap();

    let mut calls: Vec<String> = Vec::new();
    for _ in 0..n_info {
        calls.push(format!("info\t{}", sentence(NORMAL_WORDS, &mut rng)));
    }
    let error_levels = ["error", "critical", "fatal"];
    for i in 0..n_error {
        calls.push(format!("{}\t{}", error_levels[i % 3], sentence(ABNORMAL_WORDS, &mut rng)));
    }
    calls.shuffle(&mut rng);

    let mut py = String::from("import logging\n\nlog = logging.getLogger(__name__)\n\n\ndef events():\n");
    let mut java = String::from("public class Events {\n    void events() {\n");
    let mut cpp = String::from("#include <spdlog/spdlog.h>\n\nvoid events() {\n");
    for (i, call) in calls.iter().enumerate() {
        let (level, text) = call.split_once('\t').unwrap();
        match i % 3 {
            0 => py.push_str(&format!("    log.{level}(\"{text}\")\n")),
            1 => {
                // java loggers have no critical(); route it through error()
                let jl = if level == "critical" { "error" } else { level };
                java.push_str(&format!("        LOG.{jl}(\"{text}\");\n"));
            }
            _ => {
                let cl = match level {
                    "fatal" => "critical".to_string(),
                    other => other.to_string(),
                };
                cpp.push_str(&format!("    spdlog::{cl}(\"{text}\");\n"));
            }
        }
    }
    java.push_str("    }\n}\n");
    cpp.push_str("}\n");
    fs::write(dir.join("events.py"), py).unwrap();
    fs::write(dir.join("Events.java"), java).unwrap();
    fs::write(dir.join("events.cpp"), cpp).unwrap();
}

pub struct TargetCorpus {
    pub log_path: PathBuf,
    pub dataset_config_path: PathBuf,
    /// Per-line ground truth, in file order.
    pub truth: Vec<bool>,
    /// Per-line sequence group id, in file order.
    pub groups: Vec<String>,
}

/// Writes a labeled target log file: `<epoch> <label> blk_<group> <words...>`
/// with `anomaly_count` anomalous lines at seeded random positions, grouped
/// into consecutive blocks of `group_size` lines. Ships a matching generic
/// adapter config next to it.
pub fn write_target_corpus(
    dir: &Path,
    n_logs: usize,
    anomaly_count: usize,
    group_size: usize,
    seed: u64,
) -> TargetCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fs::create_dir_all(dir).unwrap();

    let mut positions: Vec<usize> = (0..n_logs).collect();
    positions.shuffle(&mut rng);
    let mut truth = vec![false; n_logs];
    for &p in positions.iter().take(anomaly_count) {
        truth[p] = true;
    }

    let mut lines = String::new();
    let mut groups = Vec::with_capacity(n_logs);
    for (i, &anomalous) in truth.iter().enumerate() {
        let pool = if anomalous { ABNORMAL_WORDS } else { NORMAL_WORDS };
        let group = i / group_size;
        groups.push(format!("blk_{group}"));
        lines.push_str(&format!(
            "{} {} blk_{} {}\n",
            1_700_000_000 + i as i64,
            u8::from(anomalous),
            group,
            sentence(pool, &mut rng)
        ));
    }
    let log_path = dir.join("target.log");
    fs::write(&log_path, lines).unwrap();

    let dataset_config_path = dir.join("dataset.json");
    let config = serde_json::json!({
        "format": "generic",
        "log_path": log_path,
        "train_frac": 0.8,
        "timestamp_field": 0,
        "label_field": 1,
        "message_start_field": 2,
        "group_key_regex": "blk_[0-9]+",
    });
    fs::write(&dataset_config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    TargetCorpus { log_path, dataset_config_path, truth, groups }
}

/// Runs the sevlog binary, panicking with full output on a nonzero exit.
pub fn sevlog(args: &[&str]) -> String {
    let output = sevlog_raw(args);
    if !output.status.success() {
        panic!(
            "sevlog {:?} failed ({}):\nstdout: {}\nstderr: {}",
            args,
            output.status,
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr),
        );
    }
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn sevlog_raw(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sevlog"))
        .args(args)
        .env_remove("SEVLOG_STOPWORDS")
        .output()
        .expect("spawn sevlog")
}

/// Parses `{"line_no":..,"score":..,"verdict":".."}` JSON lines into
/// per-line anomaly flags, in line order.
pub fn read_verdicts(path: &Path) -> Vec<bool> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .map(|line| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            v["verdict"] == "anomalous"
        })
        .collect()
}

/// Parses group verdict lines into (group id, anomalous) pairs.
pub fn read_group_verdicts(path: &Path) -> Vec<(String, bool)> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .map(|line| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            (v["group_id"].as_str().unwrap().to_string(), v["verdict"] == "anomalous")
        })
        .collect()
}

/// Precision/recall/F1 with anomalies as positives; an independent
/// hand-rolled count used to check pipeline outputs.
pub fn f1_score(predictions: &[bool], truth: &[bool]) -> (f64, f64, f64) {
    assert_eq!(predictions.len(), truth.len());
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}
