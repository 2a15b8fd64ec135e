//! Acceptance suite. Each test prints one `criterion N (...): PASS/FAIL`
//! line and pins its tolerance in code.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{
    f1_score, read_group_verdicts, read_verdicts, sevlog, write_source_tree, write_target_corpus,
};
use sevlog::detector::{aggregate_sequence, select_threshold, Criterion, Verdict};
use sevlog::eval::compute_metrics;
use sevlog::miner::{SeverityGroup, SlSample};
use sevlog::model::{
    backward_one, bce_loss_grad, forward_one, hyperspherical_loss_grad, ModelConfig, ModelParams,
    Phase,
};
use sevlog::preprocess::{encode, mask_for_pretraining, Vocabulary, UNK_TOKEN};
use sevlog::study::ngram_entropy;

fn check(n: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n} ({name}): {} [{detail}]",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_gradient_oracle() {
    let started = Instant::now();
    let cfg = ModelConfig {
        model_size: 8,
        num_heads: 2,
        num_layers: 2,
        max_len: 4,
        dropout_rate: 0.0,
        ..ModelConfig::default()
    };
    let corpus: Vec<Vec<String>> = vec![
        vec!["alpha", "beta", "gamma"],
        vec!["delta", "epsilon"],
        vec!["zeta", "eta", "theta"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    let vocab = Vocabulary::build(&corpus).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let params = ModelParams::init(&cfg, vocab.size(), &mut rng);
    let batch = vec![
        (encode(&corpus[0], &vocab, cfg.max_len), 0usize),
        (encode(&corpus[2], &vocab, cfg.max_len), 1usize),
    ];

    let mut worst: (f64, String) = (0.0, String::new());
    for phase in [Phase::Pretrain, Phase::Finetune] {
        let loss_of = |p: &ModelParams| -> f64 {
            batch
                .iter()
                .map(|(seq, label)| {
                    let (out, _) = forward_one(p, &cfg, seq, phase, None).unwrap();
                    match phase {
                        Phase::Pretrain => bce_loss_grad(&out.output, *label).0,
                        Phase::Finetune => hyperspherical_loss_grad(&out.output, *label).0,
                    }
                })
                .sum::<f64>()
                / batch.len() as f64
        };

        let mut grads = params.zeros_like();
        for (seq, label) in &batch {
            let (out, cache) = forward_one(&params, &cfg, seq, phase, None).unwrap();
            let (_, mut d_out) = match phase {
                Phase::Pretrain => bce_loss_grad(&out.output, *label),
                Phase::Finetune => hyperspherical_loss_grad(&out.output, *label),
            };
            d_out /= batch.len() as f64;
            backward_one(&params, &cfg, &cache, &d_out, &mut grads);
        }

        let h = 1e-4;
        let analytic = grads.visit();
        for t in 0..analytic.len() {
            let len = analytic[t].1.as_slice().len();
            let mut numeric = vec![0.0; len];
            for i in 0..len {
                let mut plus = params.clone();
                plus.visit_mut()[t].1.as_slice_mut()[i] += h;
                let mut minus = params.clone();
                minus.visit_mut()[t].1.as_slice_mut()[i] -= h;
                numeric[i] = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            }
            let a = analytic[t].1.as_slice();
            let diff = a
                .iter()
                .zip(&numeric)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt()
                + numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
            let rel = diff / norm.max(1e-8);
            if rel > worst.0 {
                worst = (rel, format!("{:?}/{}", phase, analytic[t].0));
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    check(
        1,
        "gradient oracle",
        worst.0 < 1e-3 && elapsed < 60.0,
        &format!("worst rel err {:.2e} at {}, {:.1}s", worst.0, worst.1, elapsed),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_loss_value_oracle() {
    let ln2 = std::f64::consts::LN_2;

    let x = array![ln2.sqrt(), 0.0, 0.0];
    let (abnormal_loss, _) = hyperspherical_loss_grad(&x, 1);
    let abnormal_ok = (abnormal_loss - ln2).abs() <= 1e-6;

    let y = array![0.6, -0.8, 0.3, 0.1];
    let expected: f64 = y.iter().map(|v| v * v).sum();
    let (normal_loss, _) = hyperspherical_loss_grad(&y, 0);
    let normal_ok = normal_loss == expected;

    let (bce, _) = bce_loss_grad(&array![0.0, 0.0], 0);
    let bce_ok = (bce - ln2).abs() <= 1e-9;

    check(
        2,
        "loss-value oracle",
        abnormal_ok && normal_ok && bce_ok,
        &format!(
            "hyper(1, ln2)={abnormal_loss:.9}, hyper(0,x)-|x|^2={:.1e}, bce(0,0)={bce:.12}",
            normal_loss - expected
        ),
    );
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_entropy_oracle() {
    // independent binary-entropy evaluation via natural logs
    let oracle = |a: f64, b: f64| -> f64 {
        let total = a + b;
        let mut h = 0.0;
        for count in [a, b] {
            if count > 0.0 {
                let p = count / total;
                h -= p * (p.ln() / std::f64::consts::LN_2);
            }
        }
        h
    };
    let mut worst = 0.0f64;
    for a in 0u64..=20 {
        for b in 0u64..=20 {
            if a + b == 0 {
                continue;
            }
            let got = ngram_entropy(a, b).unwrap();
            let want = oracle(a as f64, b as f64);
            worst = worst.max((got - want).abs());
        }
    }
    let narrated = ngram_entropy(5, 1).unwrap();
    check(
        3,
        "entropy oracle",
        worst < 1e-9 && (narrated - 0.6500).abs() <= 1e-4,
        &format!("worst |diff| {worst:.2e}, H(5,1) = {narrated:.6}"),
    );
}

// ---------------------------------------------------------------- criterion 4

fn oracle_threshold(scores: &[f64], labels: &[u8], criterion: Criterion) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let mut candidates = vec![sorted[0] * 0.5];
    for w in sorted.windows(2) {
        candidates.push(w[0] + (w[1] - w[0]) / 2.0);
    }
    candidates.push(sorted[sorted.len() - 1] * 2.0);

    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for &t in &candidates {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (&s, &l) in scores.iter().zip(labels) {
            match (s < t, l == 1) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (false, false) => {}
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let value = match criterion {
            Criterion::Precision => p,
            Criterion::Recall => r,
            Criterion::F1 => {
                if p + r > 0.0 {
                    2.0 * p * r / (p + r)
                } else {
                    0.0
                }
            }
        };
        if value > best.1 {
            best = (t, value);
        }
    }
    best.0
}

#[test]
fn criterion_4_threshold_oracle() {
    let mut fixtures = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let n = 100;
            // duplicated score values exercise the distinct-midpoint rule
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0.0..5.0f64) * 4.0).round() / 4.0 + 0.25)
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.25)).collect();
            labels[0] = 1;
            labels[1] = 0;
            for criterion in [Criterion::F1, Criterion::Precision, Criterion::Recall] {
                let got = select_threshold(&scores, &labels, criterion).unwrap().a_tilde;
                let want = oracle_threshold(&scores, &labels, criterion);
                assert_eq!(got, want, "seed {seed} criterion {criterion:?}");
            }
            fixtures += 1;
        }
    }
    check(4, "threshold oracle", fixtures == 100, &format!("{fixtures} fixtures, 3 criteria each"));
}

// ------------------------------------------------------- criteria 5 and 6

struct E2eFixture {
    #[allow(dead_code)]
    root: &'static Path,
    sl_path: PathBuf,
    pretrained: PathBuf,
    dataset_config: PathBuf,
    pipeline_seconds: f64,
    single_f1: f64,
    sequence_f1: f64,
}

fn e2e_fixture() -> &'static E2eFixture {
    static FIXTURE: OnceLock<E2eFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let root: &'static Path = Box::leak(
            tempfile::tempdir().unwrap().keep().into_boxed_path(),
        );
        let started = Instant::now();

        // mine: 1,000 SL samples out of three-language sources
        let src = root.join("src");
        write_source_tree(&src, 500, 500, 71);
        let sl_path = root.join("sl.jsonl");
        sevlog(&["mine", "--src", src.to_str().unwrap(), "--out", sl_path.to_str().unwrap()]);

        // 5,000 target logs, 2% injected anomalies, sequences of 20
        let corpus = write_target_corpus(&root.join("target"), 5_000, 100, 20, 72);

        let pretrained = root.join("pretrained");
        sevlog(&[
            "pretrain",
            "--sl", sl_path.to_str().unwrap(),
            "--out", pretrained.to_str().unwrap(),
            "--model-size", "16",
            "--num-heads", "2",
            "--num-layers", "2",
            "--max-len", "12",
            "--batch-size", "64",
            "--learning-rate", "1e-3",
            "--max-epochs", "40",
            "--patience-epochs", "5",
            "--seed", "7",
        ]);

        let finetuned = root.join("finetuned");
        sevlog(&[
            "finetune",
            "--artifact", pretrained.to_str().unwrap(),
            "--target", corpus.log_path.to_str().unwrap(),
            "--sl", sl_path.to_str().unwrap(),
            "--out", finetuned.to_str().unwrap(),
            "--dataset-config", corpus.dataset_config_path.to_str().unwrap(),
        ]);

        let verdict_path = root.join("verdicts.jsonl");
        sevlog(&[
            "detect",
            "--artifact", finetuned.to_str().unwrap(),
            "--logs", corpus.log_path.to_str().unwrap(),
            "--out", verdict_path.to_str().unwrap(),
            "--dataset-config", corpus.dataset_config_path.to_str().unwrap(),
            "--group-key-regex", "blk_[0-9]+",
        ]);
        let pipeline_seconds = started.elapsed().as_secs_f64();

        let predictions = read_verdicts(&verdict_path);
        let (_, _, single_f1) = f1_score(&predictions, &corpus.truth);

        let group_verdicts = read_group_verdicts(&verdict_path.with_extension("groups"));
        let mut group_truth = std::collections::BTreeMap::new();
        for (group, &label) in corpus.groups.iter().zip(&corpus.truth) {
            *group_truth.entry(group.clone()).or_insert(false) |= label;
        }
        let (seq_pred, seq_truth): (Vec<bool>, Vec<bool>) = group_verdicts
            .iter()
            .map(|(g, v)| (*v, group_truth[g]))
            .unzip();
        let (_, _, sequence_f1) = f1_score(&seq_pred, &seq_truth);

        E2eFixture {
            root,
            sl_path,
            pretrained,
            dataset_config: corpus.dataset_config_path.clone(),
            pipeline_seconds,
            single_f1,
            sequence_f1,
        }
    })
}

#[test]
fn criterion_5_synthetic_end_to_end() {
    let f = e2e_fixture();
    check(
        5,
        "synthetic end-to-end",
        f.single_f1 >= 0.95 && f.sequence_f1 >= 0.95 && f.pipeline_seconds < 300.0,
        &format!(
            "single F1 {:.4}, sequence F1 {:.4}, {:.0}s",
            f.single_f1, f.sequence_f1, f.pipeline_seconds
        ),
    );
}

#[test]
fn criterion_6_label_ratio_property() {
    let f = e2e_fixture();
    let report_path = f.root.join("ratio.json");
    sevlog(&[
        "ratio-exp",
        "--artifact", f.pretrained.to_str().unwrap(),
        "--dataset-config", f.dataset_config.to_str().unwrap(),
        "--sl", f.sl_path.to_str().unwrap(),
        "--ratios", "0.01,0.20",
        "--out", report_path.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let f1_at = |ratio: f64| -> f64 {
        report
            .as_array()
            .unwrap()
            .iter()
            .find(|r| (r["ratio"].as_f64().unwrap() - ratio).abs() < 1e-9)
            .unwrap()["metrics"]["f1"]
            .as_f64()
            .unwrap()
    };
    let small = f1_at(0.01);
    let large = f1_at(0.20);
    check(
        6,
        "label-ratio property",
        small >= 0.95 * large,
        &format!("F1@1% = {small:.4}, F1@20% = {large:.4}"),
    );
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_masking_statistics() {
    let samples: Vec<SlSample> = (0..1_000)
        .map(|i| SlSample {
            tokens: (0..10).map(|t| format!("tok{t}")).collect(),
            group: if i % 2 == 0 { SeverityGroup::Normal } else { SeverityGroup::Abnormal },
            source: format!("s:{i}"),
        })
        .collect();
    // ceil(0.2 * 10) = 2 replacements per selected sample; selection is
    // Bernoulli(0.15) per sample
    let per_sample = 2.0;
    let mean = 1_000.0 * 0.15 * per_sample;
    let sigma = per_sample * (1_000.0 * 0.15 * 0.85f64).sqrt();
    let (lo, hi) = (mean - 3.0 * sigma, mean + 3.0 * sigma);

    let mut counts = Vec::new();
    let mut all_inside = true;
    for seed in 0..10u64 {
        let masked = mask_for_pretraining(&samples, 0.15, 0.20, seed);
        let replaced: usize = masked
            .iter()
            .map(|s| s.tokens.iter().filter(|t| *t == UNK_TOKEN).count())
            .sum();
        all_inside &= (replaced as f64) >= lo && (replaced as f64) <= hi;
        counts.push(replaced);
    }
    check(
        7,
        "masking statistics",
        all_inside,
        &format!("counts {counts:?} vs [{lo:.1}, {hi:.1}]"),
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_aggregation_and_metrics_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let verdicts: Vec<Verdict> = (0..1_000)
        .map(|_| if rng.random::<f64>() < 0.02 { Verdict::Anomalous } else { Verdict::Normal })
        .collect();
    let mut agg_ok = true;
    for chunk in verdicts.chunks(17) {
        let got = aggregate_sequence(chunk).unwrap();
        let want = if chunk.iter().any(|&v| v == Verdict::Anomalous) {
            Verdict::Anomalous
        } else {
            Verdict::Normal
        };
        agg_ok &= got == want;
    }

    let predictions: Vec<bool> = (0..1_000).map(|_| rng.random::<f64>() < 0.3).collect();
    let truth: Vec<bool> = (0..1_000).map(|_| rng.random::<f64>() < 0.3).collect();
    let report = compute_metrics(&predictions, &truth).unwrap();
    // independent confusion-matrix count
    let tp = predictions.iter().zip(&truth).filter(|(&p, &t)| p && t).count();
    let fp = predictions.iter().zip(&truth).filter(|(&p, &t)| p && !t).count();
    let fn_ = predictions.iter().zip(&truth).filter(|(&p, &t)| !p && t).count();
    let tn = predictions.iter().zip(&truth).filter(|(&p, &t)| !p && !t).count();
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    let f1 = 2.0 * p * r / (p + r);
    let metrics_ok = report.tp == tp
        && report.fp == fp
        && report.fn_ == fn_
        && report.tn == tn
        && (report.precision - p).abs() < 1e-12
        && (report.recall - r).abs() < 1e-12
        && (report.f1 - f1).abs() < 1e-12;

    check(
        8,
        "aggregation/metrics oracles",
        agg_ok && metrics_ok,
        &format!("tp {tp} fp {fp} fn {fn_} tn {tn}"),
    );
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    write_source_tree(&src, 100, 100, 91);
    let corpus = write_target_corpus(&dir.path().join("target"), 400, 8, 20, 92);

    let run = |tag: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>) {
        let sl = dir.path().join(format!("sl-{tag}.jsonl"));
        sevlog(&["mine", "--src", src.to_str().unwrap(), "--out", sl.to_str().unwrap()]);
        let pretrained = dir.path().join(format!("pre-{tag}"));
        sevlog(&[
            "pretrain",
            "--sl", sl.to_str().unwrap(),
            "--out", pretrained.to_str().unwrap(),
            "--model-size", "8",
            "--num-heads", "2",
            "--num-layers", "1",
            "--max-len", "10",
            "--batch-size", "32",
            "--max-epochs", "6",
            "--patience-epochs", "6",
            "--seed", "23",
        ]);
        let finetuned = dir.path().join(format!("fine-{tag}"));
        sevlog(&[
            "finetune",
            "--artifact", pretrained.to_str().unwrap(),
            "--target", corpus.log_path.to_str().unwrap(),
            "--sl", sl.to_str().unwrap(),
            "--out", finetuned.to_str().unwrap(),
            "--dataset-config", corpus.dataset_config_path.to_str().unwrap(),
            "--finetune-epochs", "3",
        ]);
        let verdicts = dir.path().join(format!("verdicts-{tag}.jsonl"));
        sevlog(&[
            "detect",
            "--artifact", finetuned.to_str().unwrap(),
            "--logs", corpus.log_path.to_str().unwrap(),
            "--out", verdicts.to_str().unwrap(),
            "--dataset-config", corpus.dataset_config_path.to_str().unwrap(),
        ]);
        (
            fs::read(pretrained.join("params.bin")).unwrap(),
            fs::read(finetuned.join("params.bin")).unwrap(),
            fs::read(finetuned.join("config.json")).unwrap(),
            fs::read(&verdicts).unwrap(),
        )
    };

    let a = run("a");
    let b = run("b");
    check(
        9,
        "determinism",
        a == b,
        &format!(
            "pretrained bin {} B, finetuned bin {} B, verdicts {} B",
            a.0.len(),
            a.1.len(),
            a.3.len()
        ),
    );
}

// --------------------------------------------------------------- criterion 10

#[test]
fn criterion_10_throughput_floor() {
    let cfg = ModelConfig::default(); // model size 16, max_len 32
    let words: Vec<Vec<String>> = (0..200)
        .map(|i| vec![format!("w{i}"), format!("v{i}")])
        .collect();
    let vocab = Vocabulary::build(&words).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let params = ModelParams::init(&cfg, vocab.size(), &mut rng);

    let sequences: Vec<_> = (0..10_000)
        .map(|i| {
            let tokens: Vec<String> = (0..12).map(|t| format!("w{}", (i + t * 37) % 200)).collect();
            encode(&tokens, &vocab, cfg.max_len)
        })
        .collect();

    let started = Instant::now();
    let mut checksum = 0.0f64;
    for seq in &sequences {
        let (out, _) = forward_one(&params, &cfg, seq, Phase::Finetune, None).unwrap();
        let sq: f64 = out.output.iter().map(|v| v * v).sum();
        checksum += 1.0 / (sq + 1e-12);
    }
    let elapsed = started.elapsed().as_secs_f64();
    check(
        10,
        "throughput floor",
        elapsed < 60.0 && checksum.is_finite(),
        &format!("10,000 logs scored in {elapsed:.2}s"),
    );
}
