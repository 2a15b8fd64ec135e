//! The deep learning framework: token embeddings, a Transformer-style
//! self-attention encoder, and the two classification-head sets used by the
//! two learning phases.
//!
//! Pretraining trains embeddings + encoder + head set 1 on severity-group
//! classification (binary cross-entropy). Finetuning freezes everything but
//! head set 2 and minimizes the hyperspherical one-class loss over target
//! logs (label 0) and SL abnormal samples (label 1).

mod adam;
mod encoder;
mod loss;
mod train;

pub use adam::Adam;
pub use encoder::{backward_one, forward_one, Phase};
pub use loss::{bce_loss, bce_loss_grad, hyperspherical_loss, hyperspherical_loss_grad};
pub use train::{
    embed, finetune, mean_bce_loss, pretrain, severity_accuracy, split_train_val, LogEmbedding,
    PretrainReport, PretrainedModel,
};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feed-forward inner width as a multiple of the model size.
pub const FFN_MULT: usize = 4;

/// Hyperparameters for both learning phases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Encoder width d.
    pub model_size: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    /// Pretraining stops after this many epochs without validation-loss
    /// improvement.
    pub patience_epochs: usize,
    /// Hard cap on pretraining epochs; early stopping usually fires first.
    pub max_epochs: usize,
    pub finetune_epochs: usize,
    /// Fraction of each finetuning batch drawn from the abnormal class.
    pub abnormal_ratio: f64,
    /// Fixed sinusoidal positional encodings; disabled only by tests.
    pub positional_encoding: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model_size: 16,
            num_heads: 2,
            num_layers: 2,
            max_len: 32,
            dropout_rate: 0.05,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            batch_size: 512,
            patience_epochs: 5,
            max_epochs: 200,
            finetune_epochs: 5,
            abnormal_ratio: 0.05,
            positional_encoding: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_size == 0 || self.num_heads == 0 || self.num_layers == 0 {
            return Err(Error::invalid("model size, heads and layers must be positive"));
        }
        if !self.model_size.is_multiple_of(self.num_heads) {
            return Err(Error::invalid(format!(
                "model size {} not divisible by {} heads",
                self.model_size, self.num_heads
            )));
        }
        if self.max_len == 0 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout rate must lie in [0, 1)"));
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < v && v < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.abnormal_ratio) {
            return Err(Error::invalid("abnormal ratio must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn ffn_width(&self) -> usize {
        FFN_MULT * self.model_size
    }

    pub fn seq_len(&self) -> usize {
        self.max_len + 1
    }
}

/// One encoder block's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub ffn_w1: Array2<f64>,
    pub ffn_b1: Array1<f64>,
    pub ffn_w2: Array2<f64>,
    pub ffn_b2: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
}

/// Two linear layers; set 1 ends in 2 logits, set 2 ends in d units.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSet {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Every learnable tensor of the network. Also reused as the shape-matched
/// container for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embeddings: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub head1: HeadSet,
    pub head2: HeadSet,
}

pub enum TensorRef<'a> {
    Mat(&'a Array2<f64>),
    Vec(&'a Array1<f64>),
}

pub enum TensorMut<'a> {
    Mat(&'a mut Array2<f64>),
    Vec(&'a mut Array1<f64>),
}

impl<'a> TensorRef<'a> {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            TensorRef::Mat(m) => m.as_slice().expect("standard layout"),
            TensorRef::Vec(v) => v.as_slice().expect("standard layout"),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::Mat(m) => m.shape().to_vec(),
            TensorRef::Vec(v) => v.shape().to_vec(),
        }
    }
}

impl<'a> TensorMut<'a> {
    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        match self {
            TensorMut::Mat(m) => m.as_slice_mut().expect("standard layout"),
            TensorMut::Vec(v) => v.as_slice_mut().expect("standard layout"),
        }
    }
}

fn head_entries<'a>(prefix: &str, h: &'a HeadSet, out: &mut Vec<(String, TensorRef<'a>)>) {
    out.push((format!("{prefix}.w1"), TensorRef::Mat(&h.w1)));
    out.push((format!("{prefix}.b1"), TensorRef::Vec(&h.b1)));
    out.push((format!("{prefix}.w2"), TensorRef::Mat(&h.w2)));
    out.push((format!("{prefix}.b2"), TensorRef::Vec(&h.b2)));
}

fn head_entries_mut<'a>(prefix: &str, h: &'a mut HeadSet, out: &mut Vec<(String, TensorMut<'a>)>) {
    out.push((format!("{prefix}.w1"), TensorMut::Mat(&mut h.w1)));
    out.push((format!("{prefix}.b1"), TensorMut::Vec(&mut h.b1)));
    out.push((format!("{prefix}.w2"), TensorMut::Mat(&mut h.w2)));
    out.push((format!("{prefix}.b2"), TensorMut::Vec(&mut h.b2)));
}

impl ModelParams {
    /// Fresh parameters: weight matrices uniform in +-1/sqrt(fan_in), biases
    /// zero, layer-norm gains one. Draw order is the visit order, so
    /// initialization is reproducible from the seed alone.
    pub fn init(cfg: &ModelConfig, vocab_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.model_size;
        let f = cfg.ffn_width();
        let mut params = ModelParams {
            embeddings: Array2::zeros((vocab_size, d)),
            layers: (0..cfg.num_layers)
                .map(|_| LayerParams {
                    wq: Array2::zeros((d, d)),
                    bq: Array1::zeros(d),
                    wk: Array2::zeros((d, d)),
                    bk: Array1::zeros(d),
                    wv: Array2::zeros((d, d)),
                    bv: Array1::zeros(d),
                    wo: Array2::zeros((d, d)),
                    bo: Array1::zeros(d),
                    ln1_gain: Array1::ones(d),
                    ln1_bias: Array1::zeros(d),
                    ffn_w1: Array2::zeros((d, f)),
                    ffn_b1: Array1::zeros(f),
                    ffn_w2: Array2::zeros((f, d)),
                    ffn_b2: Array1::zeros(d),
                    ln2_gain: Array1::ones(d),
                    ln2_bias: Array1::zeros(d),
                })
                .collect(),
            head1: HeadSet {
                w1: Array2::zeros((d, d)),
                b1: Array1::zeros(d),
                w2: Array2::zeros((d, 2)),
                b2: Array1::zeros(2),
            },
            head2: HeadSet {
                w1: Array2::zeros((d, d)),
                b1: Array1::zeros(d),
                w2: Array2::zeros((d, d)),
                b2: Array1::zeros(d),
            },
        };
        for (name, mut tensor) in params.visit_mut() {
            if let TensorMut::Mat(m) = &mut tensor {
                // embedding rows are looked up, not multiplied: scale by d
                let fan_in = if name == "embeddings" { m.ncols() } else { m.nrows() };
                let bound = 1.0 / (fan_in as f64).sqrt();
                for w in m.iter_mut() {
                    *w = rng.random_range(-bound..bound);
                }
            }
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, mut t) in out.visit_mut() {
            for w in t.as_slice_mut() {
                *w = 0.0;
            }
        }
        out
    }

    /// Named tensors in a fixed order (manifest and optimizer order).
    pub fn visit(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out = Vec::new();
        out.push(("embeddings".to_string(), TensorRef::Mat(&self.embeddings)));
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.attn.wq"), TensorRef::Mat(&l.wq)));
            out.push((format!("layer{i}.attn.bq"), TensorRef::Vec(&l.bq)));
            out.push((format!("layer{i}.attn.wk"), TensorRef::Mat(&l.wk)));
            out.push((format!("layer{i}.attn.bk"), TensorRef::Vec(&l.bk)));
            out.push((format!("layer{i}.attn.wv"), TensorRef::Mat(&l.wv)));
            out.push((format!("layer{i}.attn.bv"), TensorRef::Vec(&l.bv)));
            out.push((format!("layer{i}.attn.wo"), TensorRef::Mat(&l.wo)));
            out.push((format!("layer{i}.attn.bo"), TensorRef::Vec(&l.bo)));
            out.push((format!("layer{i}.ln1.gain"), TensorRef::Vec(&l.ln1_gain)));
            out.push((format!("layer{i}.ln1.bias"), TensorRef::Vec(&l.ln1_bias)));
            out.push((format!("layer{i}.ffn.w1"), TensorRef::Mat(&l.ffn_w1)));
            out.push((format!("layer{i}.ffn.b1"), TensorRef::Vec(&l.ffn_b1)));
            out.push((format!("layer{i}.ffn.w2"), TensorRef::Mat(&l.ffn_w2)));
            out.push((format!("layer{i}.ffn.b2"), TensorRef::Vec(&l.ffn_b2)));
            out.push((format!("layer{i}.ln2.gain"), TensorRef::Vec(&l.ln2_gain)));
            out.push((format!("layer{i}.ln2.bias"), TensorRef::Vec(&l.ln2_bias)));
        }
        head_entries("head1", &self.head1, &mut out);
        head_entries("head2", &self.head2, &mut out);
        out
    }

    /// Mutable variant of [`visit`](Self::visit), same order.
    pub fn visit_mut(&mut self) -> Vec<(String, TensorMut<'_>)> {
        let ModelParams { embeddings, layers, head1, head2 } = self;
        let mut out = Vec::new();
        out.push(("embeddings".to_string(), TensorMut::Mat(embeddings)));
        for (i, l) in layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.attn.wq"), TensorMut::Mat(&mut l.wq)));
            out.push((format!("layer{i}.attn.bq"), TensorMut::Vec(&mut l.bq)));
            out.push((format!("layer{i}.attn.wk"), TensorMut::Mat(&mut l.wk)));
            out.push((format!("layer{i}.attn.bk"), TensorMut::Vec(&mut l.bk)));
            out.push((format!("layer{i}.attn.wv"), TensorMut::Mat(&mut l.wv)));
            out.push((format!("layer{i}.attn.bv"), TensorMut::Vec(&mut l.bv)));
            out.push((format!("layer{i}.attn.wo"), TensorMut::Mat(&mut l.wo)));
            out.push((format!("layer{i}.attn.bo"), TensorMut::Vec(&mut l.bo)));
            out.push((format!("layer{i}.ln1.gain"), TensorMut::Vec(&mut l.ln1_gain)));
            out.push((format!("layer{i}.ln1.bias"), TensorMut::Vec(&mut l.ln1_bias)));
            out.push((format!("layer{i}.ffn.w1"), TensorMut::Mat(&mut l.ffn_w1)));
            out.push((format!("layer{i}.ffn.b1"), TensorMut::Vec(&mut l.ffn_b1)));
            out.push((format!("layer{i}.ffn.w2"), TensorMut::Mat(&mut l.ffn_w2)));
            out.push((format!("layer{i}.ffn.b2"), TensorMut::Vec(&mut l.ffn_b2)));
            out.push((format!("layer{i}.ln2.gain"), TensorMut::Vec(&mut l.ln2_gain)));
            out.push((format!("layer{i}.ln2.bias"), TensorMut::Vec(&mut l.ln2_bias)));
        }
        head_entries_mut("head1", head1, &mut out);
        head_entries_mut("head2", head2, &mut out);
        out
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.nrows()
    }
}

/// Names of tensors trained during pretraining (everything but head set 2).
pub fn in_pretrain_set(name: &str) -> bool {
    !name.starts_with("head2")
}

/// Names of tensors trained during finetuning (head set 2 only).
pub fn in_finetune_set(name: &str) -> bool {
    name.starts_with("head2")
}
