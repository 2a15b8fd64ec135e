//! The two-phase learning procedure.
//!
//! Phase 1 (pretraining) trains embeddings, encoder and head set 1 to
//! classify the severity group of SL samples under binary cross-entropy,
//! stopping when the validation loss stalls. Phase 2 (finetuning) freezes
//! the pretrained model and trains head set 2 only, pulling target logs
//! toward the hypersphere center and pushing abnormal SL samples away.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    backward_one, bce_loss_grad, forward_one, hyperspherical_loss_grad, in_finetune_set,
    in_pretrain_set, Adam, ModelConfig, ModelParams, Phase,
};
use crate::error::{Error, Result};
use crate::miner::{SeverityGroup, SlSample};
use crate::preprocess::{encode, TokenSequence, Vocabulary};

// rng stream ids, so the phases draw from disjoint deterministic streams
const STREAM_INIT: u64 = 0;
const STREAM_PRETRAIN: u64 = 1;
const STREAM_FINETUNE: u64 = 2;
const STREAM_SPLIT: u64 = 3;

/// Output of pretraining: parameters at the best validation epoch, the
/// frozen vocabulary, and the configuration used.
#[derive(Debug, Clone)]
pub struct PretrainedModel {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub config: ModelConfig,
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// (train loss, validation loss) per epoch.
    pub history: Vec<(f64, f64)>,
}

/// Finetuned log representation: head set 2 output `x` plus the encoder's
/// `[LME]` vector.
#[derive(Debug, Clone)]
pub struct LogEmbedding {
    pub x: Array1<f64>,
    pub lme: Array1<f64>,
}

impl LogEmbedding {
    pub fn sq_norm(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum()
    }
}

/// Early-stopping bookkeeping: stop after `patience` consecutive epochs
/// without strict improvement.
pub(crate) struct EarlyStopping {
    best: f64,
    stale: usize,
    patience: usize,
    pub best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { best: f64::INFINITY, stale: 0, patience, best_epoch: 0 }
    }

    /// Records an epoch's validation loss; returns (improved, should_stop).
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }
}

fn label_of(group: SeverityGroup) -> usize {
    match group {
        SeverityGroup::Normal => 0,
        SeverityGroup::Abnormal => 1,
    }
}

fn check_two_classes(samples: &[SlSample], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid(format!("{what} split is empty")));
    }
    let normal = samples.iter().filter(|s| s.group == SeverityGroup::Normal).count();
    if normal == 0 || normal == samples.len() {
        return Err(Error::invalid(format!("{what} split is single-class")));
    }
    Ok(())
}

fn encode_labeled(
    samples: &[SlSample],
    vocab: &Vocabulary,
    max_len: usize,
) -> Vec<(TokenSequence, usize)> {
    samples
        .iter()
        .map(|s| (encode(&s.tokens, vocab, max_len), label_of(s.group)))
        .collect()
}

/// Stratified train/validation split with a seeded shuffle per class.
pub fn split_train_val(
    samples: &[SlSample],
    val_frac: f64,
    seed: u64,
) -> (Vec<SlSample>, Vec<SlSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SPLIT);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for group in [SeverityGroup::Normal, SeverityGroup::Abnormal] {
        let mut class: Vec<&SlSample> = samples.iter().filter(|s| s.group == group).collect();
        class.shuffle(&mut rng);
        let n_val = ((val_frac * class.len() as f64).round() as usize).min(class.len());
        for (i, s) in class.into_iter().enumerate() {
            if i < n_val {
                val.push(s.clone());
            } else {
                train.push(s.clone());
            }
        }
    }
    (train, val)
}

/// Mean binary cross-entropy over a labeled set, inference mode.
pub fn mean_bce_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    data: &[(TokenSequence, usize)],
) -> Result<f64> {
    let mut total = 0.0;
    for (seq, label) in data {
        let (out, _) = forward_one(params, cfg, seq, Phase::Pretrain, None)?;
        total += bce_loss_grad(&out.output, *label).0;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Severity-classification accuracy of a pretrained model over SL samples.
pub fn severity_accuracy(model: &PretrainedModel, samples: &[SlSample]) -> Result<f64> {
    let data = encode_labeled(samples, &model.vocab, model.config.max_len);
    let mut correct = 0usize;
    for (seq, label) in &data {
        let (out, _) = forward_one(&model.params, &model.config, seq, Phase::Pretrain, None)?;
        let pred = if out.output[1] > out.output[0] { 1 } else { 0 };
        if pred == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// Pretrains embeddings, encoder and head set 1 on severity classification.
///
/// `sl_train` is expected to have passed through
/// [`mask_for_pretraining`](crate::preprocess::mask_for_pretraining).
/// Training stops when the validation loss fails to improve for
/// `patience_epochs` consecutive epochs (or at `max_epochs`), and the
/// returned parameters are the ones from the best-validation epoch.
pub fn pretrain(
    sl_train: &[SlSample],
    sl_val: &[SlSample],
    config: &ModelConfig,
) -> Result<(PretrainedModel, PretrainReport)> {
    config.validate()?;
    check_two_classes(sl_train, "pretraining train")?;
    check_two_classes(sl_val, "pretraining validation")?;

    let corpus: Vec<Vec<String>> = sl_train.iter().map(|s| s.tokens.clone()).collect();
    let vocab = Vocabulary::build(&corpus)?;
    let train_data = encode_labeled(sl_train, &vocab, config.max_len);
    let val_data = encode_labeled(sl_val, &vocab, config.max_len);

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(STREAM_INIT);
    let mut params = ModelParams::init(config, vocab.size(), &mut init_rng);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_PRETRAIN);

    let mut adam = Adam::new(&params, config.learning_rate, config.beta1, config.beta2);
    let mut grads = params.zeros_like();
    let mut stopper = EarlyStopping::new(config.patience_epochs);
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut history = Vec::new();
    let mut epochs_run = 0;

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            for (_, mut t) in grads.visit_mut() {
                for g in t.as_slice_mut() {
                    *g = 0.0;
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (seq, label) = &train_data[i];
                let (out, cache) = forward_one(&params, config, seq, Phase::Pretrain, Some(&mut rng))?;
                let (loss, mut d_out) = bce_loss_grad(&out.output, *label);
                epoch_loss += loss;
                d_out *= scale;
                backward_one(&params, config, &cache, &d_out, &mut grads);
            }
            adam.step(&mut params, &grads, in_pretrain_set);
        }
        let train_loss = epoch_loss / train_data.len() as f64;
        let val_loss = mean_bce_loss(&params, config, &val_data)?;
        history.push((train_loss, val_loss));

        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best_params = params.clone();
            best_val = val_loss;
        }
        if stop {
            break;
        }
    }

    let report = PretrainReport {
        epochs_run,
        best_epoch: stopper.best_epoch,
        best_val_loss: best_val,
        history,
    };
    let model = PretrainedModel {
        params: best_params,
        vocab,
        config: config.clone(),
    };
    Ok((model, report))
}

/// Finetunes head set 2 under the hyperspherical loss.
///
/// Target logs enter with label 0, abnormal SL samples with label 1; each
/// batch holds a fixed abnormal fraction (`config.abnormal_ratio`). The
/// embeddings, encoder and head set 1 stay frozen.
pub fn finetune(
    target_train: &[TokenSequence],
    sl_abnormal: &[SlSample],
    pretrained: &PretrainedModel,
    config: &ModelConfig,
) -> Result<ModelParams> {
    config.validate()?;
    if target_train.is_empty() {
        return Err(Error::invalid("finetuning requires target-system logs"));
    }
    if sl_abnormal.is_empty() {
        return Err(Error::invalid(
            "finetuning requires the anomalous class: no abnormal SL samples given",
        ));
    }
    if config.abnormal_ratio <= 0.0 || config.abnormal_ratio >= 1.0 {
        return Err(Error::invalid(
            "finetuning requires the anomalous class: abnormal batch fraction must lie in (0, 1)",
        ));
    }
    let abnormal: Vec<TokenSequence> = sl_abnormal
        .iter()
        .map(|s| encode(&s.tokens, &pretrained.vocab, config.max_len))
        .collect();

    let n_abnormal_per_batch =
        ((config.abnormal_ratio * config.batch_size as f64).round() as usize).max(1);
    let n_target_per_batch = config.batch_size.saturating_sub(n_abnormal_per_batch);
    if n_target_per_batch == 0 {
        return Err(Error::invalid("batch size too small for the abnormal fraction"));
    }

    let mut params = pretrained.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_FINETUNE);
    let mut adam = Adam::new(&params, config.learning_rate, config.beta1, config.beta2);
    let mut grads = params.zeros_like();

    let mut order: Vec<usize> = (0..target_train.len()).collect();
    for _epoch in 0..config.finetune_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(n_target_per_batch) {
            for (_, mut t) in grads.visit_mut() {
                for g in t.as_slice_mut() {
                    *g = 0.0;
                }
            }
            let batch_len = chunk.len() + n_abnormal_per_batch;
            let scale = 1.0 / batch_len as f64;
            for &i in chunk {
                let (out, cache) =
                    forward_one(&params, config, &target_train[i], Phase::Finetune, Some(&mut rng))?;
                let (_, mut d_out) = hyperspherical_loss_grad(&out.output, 0);
                d_out *= scale;
                backward_one(&params, config, &cache, &d_out, &mut grads);
            }
            for _ in 0..n_abnormal_per_batch {
                let j = rng.random_range(0..abnormal.len());
                let (out, cache) =
                    forward_one(&params, config, &abnormal[j], Phase::Finetune, Some(&mut rng))?;
                let (_, mut d_out) = hyperspherical_loss_grad(&out.output, 1);
                d_out *= scale;
                backward_one(&params, config, &cache, &d_out, &mut grads);
            }
            adam.step(&mut params, &grads, in_finetune_set);
        }
    }
    Ok(params)
}

/// Inference-mode forward pass returning the final log representation.
pub fn embed(params: &ModelParams, cfg: &ModelConfig, seq: &TokenSequence) -> Result<LogEmbedding> {
    let (out, _) = forward_one(params, cfg, seq, Phase::Finetune, None)?;
    Ok(LogEmbedding { x: out.output, lme: out.lme })
}
