//! End-to-end pipeline assembly and the two sensitivity experiments:
//! abnormal-label ratio and model/batch size grids.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{compute_metrics, MetricsReport};
use crate::detector::{detect_score, normality_score, select_threshold, Criterion, DecisionThreshold, Verdict};
use crate::error::{Error, Result};
use crate::miner::SlSample;
use crate::model::{embed, finetune, pretrain, ModelConfig, ModelParams, PretrainedModel};
use crate::preprocess::{encode, TokenSequence};

/// Normality scores for a batch of encoded logs.
pub fn score_all(
    params: &ModelParams,
    cfg: &ModelConfig,
    seqs: &[TokenSequence],
) -> Result<Vec<f64>> {
    seqs.iter()
        .map(|s| Ok(normality_score(&embed(params, cfg, s)?)))
        .collect()
}

/// Finetunes head set 2, then selects the decision threshold on a validation
/// set of held-out target logs (class 0) mixed with the abnormal samples
/// (class 1).
pub fn finetune_with_threshold(
    pretrained: &PretrainedModel,
    target_train: &[TokenSequence],
    threshold_val: &[TokenSequence],
    abnormal: &[SlSample],
    config: &ModelConfig,
    criterion: Criterion,
) -> Result<(ModelParams, DecisionThreshold)> {
    if threshold_val.is_empty() {
        return Err(Error::invalid("threshold selection requires validation target logs"));
    }
    let params = finetune(target_train, abnormal, pretrained, config)?;

    let abnormal_seqs: Vec<TokenSequence> = abnormal
        .iter()
        .map(|s| encode(&s.tokens, &pretrained.vocab, config.max_len))
        .collect();
    let mut scores = score_all(&params, config, threshold_val)?;
    let mut labels = vec![0u8; scores.len()];
    scores.extend(score_all(&params, config, &abnormal_seqs)?);
    labels.extend(std::iter::repeat_n(1u8, abnormal_seqs.len()));
    let threshold = select_threshold(&scores, &labels, criterion)?;
    Ok((params, threshold))
}

/// Scores a labeled test set and computes detection metrics.
pub fn evaluate_detection(
    params: &ModelParams,
    cfg: &ModelConfig,
    threshold: &DecisionThreshold,
    test: &[(TokenSequence, bool)],
) -> Result<MetricsReport> {
    let mut predictions = Vec::with_capacity(test.len());
    let mut truth = Vec::with_capacity(test.len());
    for (seq, label) in test {
        let score = normality_score(&embed(params, cfg, seq)?);
        predictions.push(detect_score(score, threshold).verdict == Verdict::Anomalous);
        truth.push(*label);
    }
    compute_metrics(&predictions, &truth)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioResult {
    pub ratio: f64,
    pub threshold: f64,
    pub metrics: MetricsReport,
}

/// Finetunes once per requested abnormal-batch ratio and evaluates each model
/// on the same held-out test set. The abnormal sample source (mined SL data
/// or an external labeled file) is the caller's choice.
pub fn run_label_ratio_experiment(
    pretrained: &PretrainedModel,
    target_train: &[TokenSequence],
    threshold_val: &[TokenSequence],
    abnormal: &[SlSample],
    test: &[(TokenSequence, bool)],
    ratios: &[f64],
    criterion: Criterion,
) -> Result<Vec<RatioResult>> {
    let mut results = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let config = ModelConfig { abnormal_ratio: ratio, ..pretrained.config.clone() };
        let (params, threshold) = finetune_with_threshold(
            pretrained,
            target_train,
            threshold_val,
            abnormal,
            &config,
            criterion,
        )?;
        let metrics = evaluate_detection(&params, &config, &threshold, test)?;
        results.push(RatioResult { ratio, threshold: threshold.a_tilde, metrics });
    }
    Ok(results)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub model_size: usize,
    pub batch_size: usize,
    pub train_seconds: f64,
    pub metrics: MetricsReport,
}

/// Full model-size x batch-size grid. Every cell retrains from scratch on the
/// same data and seed; the recorded time covers pretraining plus finetuning
/// (the model update path).
#[allow(clippy::too_many_arguments)]
pub fn run_sensitivity_experiment(
    sl_train: &[SlSample],
    sl_val: &[SlSample],
    target_train_tokens: &[Vec<String>],
    threshold_val_tokens: &[Vec<String>],
    abnormal: &[SlSample],
    test_tokens: &[(Vec<String>, bool)],
    base: &ModelConfig,
    model_sizes: &[usize],
    batch_sizes: &[usize],
    criterion: Criterion,
) -> Result<Vec<SensitivityCell>> {
    let mut cells = Vec::with_capacity(model_sizes.len() * batch_sizes.len());
    for &model_size in model_sizes {
        for &batch_size in batch_sizes {
            let config = ModelConfig { model_size, batch_size, ..base.clone() };
            config.validate()?;

            let started = Instant::now();
            let (pretrained, _) = pretrain(sl_train, sl_val, &config)?;
            let encode_all = |tokens: &[Vec<String>]| -> Vec<TokenSequence> {
                tokens
                    .iter()
                    .map(|t| encode(t, &pretrained.vocab, config.max_len))
                    .collect()
            };
            let target_train = encode_all(target_train_tokens);
            let threshold_val = encode_all(threshold_val_tokens);
            let (params, threshold) = finetune_with_threshold(
                &pretrained,
                &target_train,
                &threshold_val,
                abnormal,
                &config,
                criterion,
            )?;
            let train_seconds = started.elapsed().as_secs_f64();

            let test: Vec<(TokenSequence, bool)> = test_tokens
                .iter()
                .map(|(t, label)| (encode(t, &pretrained.vocab, config.max_len), *label))
                .collect();
            let metrics = evaluate_detection(&params, &config, &threshold, &test)?;
            cells.push(SensitivityCell { model_size, batch_size, train_seconds, metrics });
        }
    }
    Ok(cells)
}
