//! Command-line entry points tying the pipeline together:
//! mine -> study -> pretrain -> finetune -> detect/evaluate, plus the two
//! experiment drivers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use regex::Regex;
use serde::Serialize;

use crate::artifact::{ModelArtifact, Stage};
use crate::detector::{aggregate_sequence, detect_score, Criterion, Verdict};
use crate::eval::adapters::{load_dataset, DatasetConfig};
use crate::eval::experiments::{
    finetune_with_threshold, run_label_ratio_experiment, run_sensitivity_experiment, score_all,
};
use crate::eval::{
    chronological_split, compute_metrics, group_by_key, group_by_time_window, LabeledLog,
    MetricsReport,
};
use crate::miner::{mine_tree, read_sl_file, write_sl_file, SeverityGroup, SlSample};
use crate::model::{pretrain, split_train_val, ModelConfig};
use crate::preprocess::{encode, mask_for_pretraining, Normalizer, TokenSequence};
use crate::study::{run_study, LexiconScorer, DEFAULT_MIN_COUNT, DEFAULT_SENTIMENT_TAU};

#[derive(Parser)]
#[command(
    name = "sevlog",
    about = "Mines severity-labeled log instructions and detects log anomalies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine log instructions from a source tree into an SL dataset
    Mine(MineArgs),
    /// N-gram entropy and sentiment study over an SL dataset
    Study(StudyArgs),
    /// Phase 1: severity-group pretraining
    Pretrain(PretrainArgs),
    /// Phase 2: hyperspherical finetuning plus threshold selection
    Finetune(FinetuneArgs),
    /// Score logs and emit verdicts
    Detect(DetectArgs),
    /// Score a labeled dataset's test split and report metrics
    Evaluate(EvaluateArgs),
    /// Finetune at several abnormal-batch ratios and compare
    RatioExp(RatioExpArgs),
    /// Model-size x batch-size sensitivity grid
    SensitivityExp(SensitivityExpArgs),
}

/// Flags mirroring [`ModelConfig`] one to one; unset flags keep the default
/// (pretrain) or the artifact's stored value (finetune).
#[derive(Args, Clone, Default)]
struct ConfigFlags {
    #[arg(long)]
    model_size: Option<usize>,
    #[arg(long)]
    num_heads: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience_epochs: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    abnormal_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the fixed sinusoidal positional encodings (test hook)
    #[arg(long)]
    no_positional_encoding: bool,
}

impl ConfigFlags {
    fn apply(&self, cfg: &mut ModelConfig) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        set!(model_size);
        set!(num_heads);
        set!(num_layers);
        set!(max_len);
        set!(dropout_rate);
        set!(learning_rate);
        set!(beta1);
        set!(beta2);
        set!(batch_size);
        set!(patience_epochs);
        set!(max_epochs);
        set!(finetune_epochs);
        set!(abnormal_ratio);
        set!(seed);
        if self.no_positional_encoding {
            cfg.positional_encoding = false;
        }
    }
}

#[derive(Args)]
struct MineArgs {
    /// Source tree to mine
    #[arg(long)]
    src: PathBuf,
    /// Output SL dataset (JSON lines)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    /// Input SL dataset
    #[arg(long)]
    sl: PathBuf,
    /// Output report (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Keep n-grams appearing strictly more often than this
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: u64,
    /// Sentiment score cutoff separating positive/negative from neutral
    #[arg(long, default_value_t = DEFAULT_SENTIMENT_TAU)]
    tau: f64,
    /// Optional tab-separated dump of every n-gram record
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Input SL dataset
    #[arg(long)]
    sl: PathBuf,
    /// Output artifact directory
    #[arg(long)]
    out: PathBuf,
    /// Fraction of SL data held out for early-stopping validation
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    /// Fraction of SL samples that get [UNK] masking
    #[arg(long, default_value_t = 0.15)]
    mask_sample_frac: f64,
    /// Fraction of tokens replaced inside a masked sample
    #[arg(long, default_value_t = 0.2)]
    mask_token_frac: f64,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Pretrained artifact directory
    #[arg(long)]
    artifact: PathBuf,
    /// Target-system log file
    #[arg(long)]
    target: PathBuf,
    /// SL dataset supplying the abnormal class
    #[arg(long)]
    sl: PathBuf,
    /// Output artifact directory
    #[arg(long)]
    out: PathBuf,
    /// Optional adapter config for the target file (bare messages otherwise)
    #[arg(long)]
    dataset_config: Option<PathBuf>,
    /// Chronological fraction of the target file used for training
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    /// Trailing fraction of the training split reserved for threshold selection
    #[arg(long, default_value_t = 0.1)]
    threshold_val_frac: f64,
    /// Criterion maximized when selecting the threshold
    #[arg(long, default_value = "f1")]
    criterion: Criterion,
    /// Where the abnormal class comes from: the SL file or an external
    /// labeled dataset
    #[arg(long, default_value = "sl")]
    abnormal_source: AbnormalSource,
    /// Adapter config for the external labeled dataset
    #[arg(long)]
    external_config: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum AbnormalSource {
    Sl,
    External,
}

#[derive(Args)]
struct DetectArgs {
    /// Finetuned artifact directory
    #[arg(long)]
    artifact: PathBuf,
    /// Input log file
    #[arg(long)]
    logs: PathBuf,
    /// Output verdicts (JSON lines)
    #[arg(long)]
    out: PathBuf,
    /// Optional adapter config (bare messages otherwise)
    #[arg(long)]
    dataset_config: Option<PathBuf>,
    /// Aggregate sequences keyed by this regex over the raw line
    #[arg(long)]
    group_key_regex: Option<String>,
    /// Aggregate sequences over fixed time windows (needs timestamps)
    #[arg(long)]
    window_seconds: Option<i64>,
    /// Output for sequence verdicts (defaults to <out>.groups)
    #[arg(long)]
    group_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Finetuned artifact directory
    #[arg(long)]
    artifact: PathBuf,
    /// Adapter config of the labeled dataset
    #[arg(long)]
    dataset_config: PathBuf,
    /// Output report (JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RatioExpArgs {
    /// Pretrained artifact directory
    #[arg(long)]
    artifact: PathBuf,
    /// Labeled target dataset adapter config
    #[arg(long)]
    dataset_config: PathBuf,
    /// SL dataset supplying the abnormal class
    #[arg(long)]
    sl: PathBuf,
    /// Abnormal-batch fractions to try
    #[arg(long, value_delimiter = ',', required = true)]
    ratios: Vec<f64>,
    /// Output report (JSON)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    threshold_val_frac: f64,
    #[arg(long, default_value = "f1")]
    criterion: Criterion,
    #[arg(long, default_value = "sl")]
    abnormal_source: AbnormalSource,
    #[arg(long)]
    external_config: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Args)]
struct SensitivityExpArgs {
    /// Input SL dataset
    #[arg(long)]
    sl: PathBuf,
    /// Labeled target dataset adapter config
    #[arg(long)]
    dataset_config: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    model_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    batch_sizes: Vec<usize>,
    /// Output report (JSON)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    threshold_val_frac: f64,
    #[arg(long, default_value = "f1")]
    criterion: Criterion,
    #[command(flatten)]
    config: ConfigFlags,
}

pub fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Mine(args) => cmd_mine(args),
        Command::Study(args) => cmd_study(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::RatioExp(args) => cmd_ratio_exp(args),
        Command::SensitivityExp(args) => cmd_sensitivity_exp(args),
    }
}

fn cmd_mine(args: MineArgs) -> anyhow::Result<()> {
    let normalizer = Normalizer::from_env()?;
    let samples = mine_tree(&args.src, &normalizer)
        .with_context(|| format!("mining {}", args.src.display()))?;
    if samples.is_empty() {
        bail!("no log instructions extracted from {}", args.src.display());
    }
    write_sl_file(&args.out, &samples)?;
    let normal = samples.iter().filter(|s| s.group == SeverityGroup::Normal).count();
    println!(
        "mined {} samples ({} normal / {} abnormal) -> {}",
        samples.len(),
        normal,
        samples.len() - normal,
        args.out.display()
    );
    Ok(())
}

fn cmd_study(args: StudyArgs) -> anyhow::Result<()> {
    let samples = read_sl_file(&args.sl)?;
    if samples.is_empty() {
        bail!("SL dataset {} is empty", args.sl.display());
    }
    let scorer = LexiconScorer::default();
    let (report, records) = run_study(&samples, &[3, 4, 5], args.min_count, &scorer, args.tau);
    fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    if let Some(dump) = &args.dump {
        let mut file = fs::File::create(dump)?;
        writeln!(file, "ngram\tn\tcount_normal\tcount_abnormal\tentropy\tsentiment")?;
        for r in &records {
            writeln!(
                file,
                "{}\t{}\t{}\t{}\t{:.6}\t{:?}",
                r.ngram, r.n, r.count_normal, r.count_abnormal, r.entropy, r.sentiment
            )?;
        }
    }
    println!(
        "studied {} samples, {} retained n-grams -> {}",
        report.sample_count,
        records.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_pretrain(args: PretrainArgs) -> anyhow::Result<()> {
    let samples = read_sl_file(&args.sl)?;
    let mut config = ModelConfig::default();
    args.config.apply(&mut config);

    let (train, val) = split_train_val(&samples, args.val_frac, config.seed);
    let masked = mask_for_pretraining(&train, args.mask_sample_frac, args.mask_token_frac, config.seed);
    let (model, report) = pretrain(&masked, &val, &config)?;
    ModelArtifact::pretrained(&model).save(&args.out)?;
    println!(
        "pretrained for {} epochs (best epoch {}, val loss {:.6}) -> {}",
        report.epochs_run,
        report.best_epoch,
        report.best_val_loss,
        args.out.display()
    );
    Ok(())
}

/// Reads target logs either through a dataset adapter or as one bare message
/// per line.
fn load_target_logs(path: &Path, dataset_config: Option<&Path>) -> anyhow::Result<Vec<LabeledLog>> {
    match dataset_config {
        Some(cfg_path) => {
            let mut cfg = DatasetConfig::from_file(cfg_path)?;
            cfg.log_path = path.to_path_buf();
            Ok(load_dataset(&cfg)?)
        }
        None => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading target logs {}", path.display()))?;
            Ok(text
                .lines()
                .enumerate()
                .map(|(i, line)| LabeledLog {
                    timestamp: i as i64,
                    message: line.to_string(),
                    label: None,
                    group_key: None,
                })
                .collect())
        }
    }
}

fn abnormal_samples(
    source: AbnormalSource,
    sl_path: &Path,
    external_config: Option<&Path>,
    normalizer: &Normalizer,
) -> anyhow::Result<Vec<SlSample>> {
    match source {
        AbnormalSource::Sl => {
            let samples = read_sl_file(sl_path)?;
            Ok(samples.into_iter().filter(|s| s.group == SeverityGroup::Abnormal).collect())
        }
        AbnormalSource::External => {
            let Some(cfg_path) = external_config else {
                bail!("--abnormal-source external requires --external-config");
            };
            let cfg = DatasetConfig::from_file(cfg_path)?;
            let logs = load_dataset(&cfg)?;
            let samples: Vec<SlSample> = logs
                .iter()
                .enumerate()
                .filter(|(_, l)| l.label == Some(true))
                .filter_map(|(i, l)| {
                    let tokens = normalizer.normalize(&l.message);
                    if tokens.is_empty() {
                        return None;
                    }
                    Some(SlSample {
                        tokens,
                        group: SeverityGroup::Abnormal,
                        source: format!("{}:{}", cfg.log_path.display(), i + 1),
                    })
                })
                .collect();
            if samples.is_empty() {
                bail!("external dataset contributed no labeled anomalous logs");
            }
            Ok(samples)
        }
    }
}

/// Splits a chronological target into (finetune train, threshold validation);
/// the validation part is the trailing slice of the training split.
fn split_target(
    train: &[LabeledLog],
    threshold_val_frac: f64,
) -> (&[LabeledLog], &[LabeledLog]) {
    let val_len = ((train.len() as f64) * threshold_val_frac).floor() as usize;
    let val_len = val_len.clamp(1, train.len().saturating_sub(1).max(1));
    train.split_at(train.len() - val_len)
}

fn encode_messages(
    logs: &[LabeledLog],
    normalizer: &Normalizer,
    artifact: &ModelArtifact,
) -> Vec<TokenSequence> {
    logs.iter()
        .map(|l| encode(&normalizer.normalize(&l.message), &artifact.vocab, artifact.config.max_len))
        .collect()
}

fn cmd_finetune(args: FinetuneArgs) -> anyhow::Result<()> {
    let artifact = ModelArtifact::load(&args.artifact)?;
    let normalizer = Normalizer::from_env()?;
    let mut config = artifact.config.clone();
    args.config.apply(&mut config);

    let logs = load_target_logs(&args.target, args.dataset_config.as_deref())?;
    let (train_logs, _) = chronological_split(&logs, args.train_frac)?;
    let (finetune_logs, threshold_logs) = split_target(train_logs, args.threshold_val_frac);

    let target_train = encode_messages(finetune_logs, &normalizer, &artifact);
    let threshold_val = encode_messages(threshold_logs, &normalizer, &artifact);
    let abnormal = abnormal_samples(
        args.abnormal_source,
        &args.sl,
        args.external_config.as_deref(),
        &normalizer,
    )?;

    let pretrained = artifact.as_pretrained_model();
    let (params, threshold) = finetune_with_threshold(
        &pretrained,
        &target_train,
        &threshold_val,
        &abnormal,
        &config,
        args.criterion,
    )?;

    let out = ModelArtifact {
        params,
        vocab: artifact.vocab.clone(),
        config,
        stage: Stage::Finetuned,
        threshold: Some(threshold),
    };
    out.save(&args.out)?;
    println!(
        "finetuned on {} target logs + {} abnormal samples, threshold {:.6} -> {}",
        target_train.len(),
        abnormal.len(),
        threshold.a_tilde,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct VerdictLine {
    line_no: usize,
    score: f64,
    verdict: Verdict,
}

#[derive(Serialize)]
struct GroupVerdictLine {
    group_id: String,
    verdict: Verdict,
}

fn cmd_detect(args: DetectArgs) -> anyhow::Result<()> {
    let artifact = ModelArtifact::load(&args.artifact)?;
    let threshold = artifact.require_threshold()?;
    let normalizer = Normalizer::from_env()?;

    let mut logs = load_target_logs(&args.logs, args.dataset_config.as_deref())?;
    if let Some(pattern) = &args.group_key_regex {
        let re = Regex::new(pattern).context("bad --group-key-regex")?;
        // in bare mode the message is the raw line
        for log in &mut logs {
            if log.group_key.is_none() {
                log.group_key = re.find(&log.message).map(|m| m.as_str().to_string());
            }
        }
    }

    let sequences = encode_messages(&logs, &normalizer, &artifact);
    let scores = score_all(&artifact.params, &artifact.config, &sequences)?;
    let verdicts: Vec<Verdict> = scores
        .iter()
        .map(|&s| detect_score(s, &threshold).verdict)
        .collect();

    let mut out = fs::File::create(&args.out)?;
    for (i, (&score, &verdict)) in scores.iter().zip(&verdicts).enumerate() {
        let line = VerdictLine { line_no: i + 1, score, verdict };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }

    let anomalous = verdicts.iter().filter(|&&v| v == Verdict::Anomalous).count();
    println!(
        "detected {} anomalous / {} logs -> {}",
        anomalous,
        logs.len(),
        args.out.display()
    );

    if args.group_key_regex.is_some() || args.window_seconds.is_some() {
        let groups: Vec<(String, Vec<usize>)> = if let Some(window) = args.window_seconds {
            if args.dataset_config.is_none() {
                bail!("--window-seconds needs --dataset-config for timestamps");
            }
            group_by_time_window(&logs, window)
                .into_iter()
                .map(|members| {
                    let w = (logs[members[0]].timestamp - logs[0].timestamp) / window;
                    (format!("window-{w}"), members)
                })
                .collect()
        } else {
            group_by_key(&logs)?.into_iter().collect()
        };

        let group_out = args
            .group_out
            .unwrap_or_else(|| args.out.with_extension("groups"));
        let mut gout = fs::File::create(&group_out)?;
        let mut anomalous_groups = 0usize;
        for (group_id, members) in &groups {
            let member_verdicts: Vec<Verdict> = members.iter().map(|&i| verdicts[i]).collect();
            let verdict = aggregate_sequence(&member_verdicts)?;
            if verdict == Verdict::Anomalous {
                anomalous_groups += 1;
            }
            serde_json::to_writer(&mut gout, &GroupVerdictLine { group_id: group_id.clone(), verdict })?;
            gout.write_all(b"\n")?;
        }
        println!(
            "aggregated {} anomalous / {} sequences -> {}",
            anomalous_groups,
            groups.len(),
            group_out.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluateReport {
    test_logs: usize,
    single: MetricsReport,
    sequence: Option<MetricsReport>,
    sequences: Option<usize>,
    threshold: f64,
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let artifact = ModelArtifact::load(&args.artifact)?;
    let threshold = artifact.require_threshold()?;
    let normalizer = Normalizer::from_env()?;
    let dataset = DatasetConfig::from_file(&args.dataset_config)?;
    let logs = load_dataset(&dataset)?;
    let (_, test) = chronological_split(&logs, dataset.train_frac)?;

    let truth: Vec<bool> = test
        .iter()
        .enumerate()
        .map(|(i, l)| l.label.ok_or_else(|| anyhow::anyhow!("test log {} has no label", i + 1)))
        .collect::<anyhow::Result<_>>()?;

    let sequences = encode_messages(test, &normalizer, &artifact);
    let scores = score_all(&artifact.params, &artifact.config, &sequences)?;
    let predictions: Vec<bool> = scores
        .iter()
        .map(|&s| detect_score(s, &threshold).verdict == Verdict::Anomalous)
        .collect();
    let single = compute_metrics(&predictions, &truth)?;

    let groups: Option<Vec<Vec<usize>>> = if let Some(window) = dataset.window_seconds {
        Some(group_by_time_window(test, window))
    } else if dataset.group_key_regex.is_some() {
        Some(group_by_key(test)?.into_values().collect())
    } else {
        None
    };
    let sequence = match &groups {
        Some(groups) => {
            let group_preds: Vec<bool> = groups
                .iter()
                .map(|members| members.iter().any(|&i| predictions[i]))
                .collect();
            let group_truth: Vec<bool> = groups
                .iter()
                .map(|members| members.iter().any(|&i| truth[i]))
                .collect();
            Some(compute_metrics(&group_preds, &group_truth)?)
        }
        None => None,
    };

    let report = EvaluateReport {
        test_logs: test.len(),
        single,
        sequence,
        sequences: groups.as_ref().map(|g| g.len()),
        threshold: threshold.a_tilde,
    };
    fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "evaluated {} test logs: single-line F1 {:.4}{} -> {}",
        report.test_logs,
        report.single.f1,
        report
            .sequence
            .map(|m| format!(", sequence F1 {:.4}", m.f1))
            .unwrap_or_default(),
        args.out.display()
    );
    Ok(())
}

/// Shared target preparation for the experiment commands: token lists for
/// the finetune/threshold splits plus the labeled test set.
struct PreparedTarget {
    finetune_tokens: Vec<Vec<String>>,
    threshold_tokens: Vec<Vec<String>>,
    test_tokens: Vec<(Vec<String>, bool)>,
}

fn prepare_target(
    dataset: &DatasetConfig,
    threshold_val_frac: f64,
    normalizer: &Normalizer,
) -> anyhow::Result<PreparedTarget> {
    let logs = load_dataset(dataset)?;
    let (train, test) = chronological_split(&logs, dataset.train_frac)?;
    let (finetune_logs, threshold_logs) = split_target(train, threshold_val_frac);
    let tokens = |ls: &[LabeledLog]| -> Vec<Vec<String>> {
        ls.iter().map(|l| normalizer.normalize(&l.message)).collect()
    };
    let test_tokens = test
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let label = l
                .label
                .ok_or_else(|| anyhow::anyhow!("test log {} has no label", i + 1))?;
            Ok((normalizer.normalize(&l.message), label))
        })
        .collect::<anyhow::Result<_>>()?;
    Ok(PreparedTarget {
        finetune_tokens: tokens(finetune_logs),
        threshold_tokens: tokens(threshold_logs),
        test_tokens,
    })
}

fn cmd_ratio_exp(args: RatioExpArgs) -> anyhow::Result<()> {
    let artifact = ModelArtifact::load(&args.artifact)?;
    let normalizer = Normalizer::from_env()?;
    let dataset = DatasetConfig::from_file(&args.dataset_config)?;
    let prepared = prepare_target(&dataset, args.threshold_val_frac, &normalizer)?;
    let abnormal = abnormal_samples(
        args.abnormal_source,
        &args.sl,
        args.external_config.as_deref(),
        &normalizer,
    )?;

    let mut pretrained = artifact.as_pretrained_model();
    args.config.apply(&mut pretrained.config);
    let enc = |tokens: &[Vec<String>]| -> Vec<TokenSequence> {
        tokens
            .iter()
            .map(|t| encode(t, &pretrained.vocab, pretrained.config.max_len))
            .collect()
    };
    let target_train = enc(&prepared.finetune_tokens);
    let threshold_val = enc(&prepared.threshold_tokens);
    let test: Vec<(TokenSequence, bool)> = prepared
        .test_tokens
        .iter()
        .map(|(t, l)| (encode(t, &pretrained.vocab, pretrained.config.max_len), *l))
        .collect();

    let results = run_label_ratio_experiment(
        &pretrained,
        &target_train,
        &threshold_val,
        &abnormal,
        &test,
        &args.ratios,
        args.criterion,
    )?;
    fs::write(&args.out, serde_json::to_string_pretty(&results)?)?;
    for r in &results {
        println!("ratio {:.3}: F1 {:.4} (P {:.4}, R {:.4})", r.ratio, r.metrics.f1, r.metrics.precision, r.metrics.recall);
    }
    Ok(())
}

fn cmd_sensitivity_exp(args: SensitivityExpArgs) -> anyhow::Result<()> {
    let samples = read_sl_file(&args.sl)?;
    let normalizer = Normalizer::from_env()?;
    let dataset = DatasetConfig::from_file(&args.dataset_config)?;
    let prepared = prepare_target(&dataset, args.threshold_val_frac, &normalizer)?;

    let mut base = ModelConfig::default();
    args.config.apply(&mut base);

    let (train, val) = split_train_val(&samples, args.val_frac, base.seed);
    let masked = mask_for_pretraining(&train, 0.15, 0.2, base.seed);
    let abnormal: Vec<SlSample> = samples
        .iter()
        .filter(|s| s.group == SeverityGroup::Abnormal)
        .cloned()
        .collect();

    let cells = run_sensitivity_experiment(
        &masked,
        &val,
        &prepared.finetune_tokens,
        &prepared.threshold_tokens,
        &abnormal,
        &prepared.test_tokens,
        &base,
        &args.model_sizes,
        &args.batch_sizes,
        args.criterion,
    )?;
    fs::write(&args.out, serde_json::to_string_pretty(&cells)?)?;
    for c in &cells {
        println!(
            "model {} / batch {}: F1 {:.4}, train {:.2}s",
            c.model_size, c.batch_size, c.metrics.f1, c.train_seconds
        );
    }
    Ok(())
}
