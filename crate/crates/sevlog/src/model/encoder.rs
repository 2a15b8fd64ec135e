//! Forward and backward passes through the encoder and classification heads.
//!
//! Sequences are processed one at a time as `(max_len + 1) x d` matrices.
//! Position 0 holds the `[LME]` token; its final-layer vector is the log
//! representation. Attention keys at `[PD]` positions are masked out, so
//! padding never influences the output. Backward fills a shape-matched
//! [`ModelParams`] with gradient accumulations for every tensor; the
//! training loops decide which subset the optimizer applies.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{HeadSet, LayerParams, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::preprocess::TokenSequence;

const LN_EPS: f64 = 1e-5;
const MASKED_SCORE: f64 = -1e30;

/// Which classification head the `[LME]` vector routes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
}

pub struct ForwardOutput {
    /// Encoder output at the `[LME]` position.
    pub lme: Array1<f64>,
    /// Head output: 2 logits in pretraining, d-dimensional x in finetuning.
    pub output: Array1<f64>,
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub(crate) struct LayerCache {
    x_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    att: Vec<Array2<f64>>,
    att_drop: Vec<Option<Array2<f64>>>,
    concat: Array2<f64>,
    attn_out_drop: Option<Array2<f64>>,
    ln1: LnCache,
    y1: Array2<f64>,
    ffn_pre: Array2<f64>,
    ffn_out_drop: Option<Array2<f64>>,
    ln2: LnCache,
}

pub struct SeqCache {
    indices: Vec<usize>,
    emb_drop: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    lme: Array1<f64>,
    head_pre: Array1<f64>,
    head_hidden: Array1<f64>,
    phase: Phase,
}

fn sinusoidal_encoding(seq_len: usize, d: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((seq_len, d));
    for pos in 0..seq_len {
        for i in 0..d {
            let exponent = 2.0 * (i / 2) as f64 / d as f64;
            let angle = pos as f64 / 10_000f64.powf(exponent);
            pe[[pos, i]] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Inverted-dropout multiplier mask: survivors scale by 1/keep.
fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 - rate;
    let mut mask = Array2::zeros((rows, cols));
    for w in mask.iter_mut() {
        *w = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
    }
    mask
}

fn apply_dropout(
    x: &mut Array2<f64>,
    rate: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Option<Array2<f64>> {
    match rng {
        Some(r) if rate > 0.0 => {
            let mask = dropout_mask(x.nrows(), x.ncols(), rate, r);
            *x *= &mask;
            Some(mask)
        }
        _ => None,
    }
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols();
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut inv_std = Array1::zeros(x.nrows());
    for (r, row) in x.axis_iter(Axis(0)).enumerate() {
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = istd;
        for c in 0..d {
            xhat[[r, c]] = (x[[r, c]] - mean) * istd;
        }
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let m1 = dxhat.sum_axis(Axis(1)).mapv(|v| v / d);
    let m2 = (&dxhat * &cache.xhat).sum_axis(Axis(1)).mapv(|v| v / d);
    let mut dx = Array2::zeros(dy.raw_dim());
    for r in 0..dy.nrows() {
        for c in 0..dy.ncols() {
            dx[[r, c]] = cache.inv_std[r] * (dxhat[[r, c]] - m1[r] - cache.xhat[[r, c]] * m2[r]);
        }
    }
    dx
}

fn softmax_rows_masked(scores: &mut Array2<f64>, key_mask: &[bool]) {
    for (j, &keep) in key_mask.iter().enumerate() {
        if !keep {
            scores.column_mut(j).fill(MASKED_SCORE);
        }
    }
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    a.view()
        .insert_axis(Axis(1))
        .dot(&b.view().insert_axis(Axis(0)))
}

fn head_forward(head: &HeadSet, lme: &Array1<f64>) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let pre = lme.dot(&head.w1) + &head.b1;
    let hidden = pre.mapv(|v| v.max(0.0));
    let out = hidden.dot(&head.w2) + &head.b2;
    (pre, hidden, out)
}

/// Runs one encoded sequence through the network.
///
/// Passing a dropout RNG switches the pass to training mode; inference omits
/// it and is deterministic.
pub fn forward_one(
    params: &ModelParams,
    cfg: &ModelConfig,
    seq: &TokenSequence,
    phase: Phase,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(ForwardOutput, SeqCache)> {
    let d = cfg.model_size;
    if seq.len() != cfg.seq_len() {
        return Err(Error::invalid(format!(
            "sequence length {} does not match max_len {} + 1",
            seq.len(),
            cfg.max_len
        )));
    }
    let vocab_size = params.vocab_size();
    let mut x = Array2::zeros((seq.len(), d));
    for (pos, &idx) in seq.indices.iter().enumerate() {
        if idx >= vocab_size {
            return Err(Error::invalid(format!(
                "token index {idx} out of range for vocabulary of {vocab_size}"
            )));
        }
        x.row_mut(pos).assign(&params.embeddings.row(idx));
    }
    if cfg.positional_encoding {
        x += &sinusoidal_encoding(seq.len(), d);
    }
    let emb_drop = apply_dropout(&mut x, cfg.dropout_rate, &mut dropout_rng);

    let n_heads = cfg.num_heads;
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut layer_caches = Vec::with_capacity(params.layers.len());

    for layer in &params.layers {
        let x_in = x.clone();
        let q = x_in.dot(&layer.wq) + &layer.bq;
        let k = x_in.dot(&layer.wk) + &layer.bk;
        let v = x_in.dot(&layer.wv) + &layer.bv;

        let mut att = Vec::with_capacity(n_heads);
        let mut att_drop = Vec::with_capacity(n_heads);
        let mut concat = Array2::zeros((seq.len(), d));
        for h in 0..n_heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let qi = q.slice(cols);
            let ki = k.slice(cols);
            let vi = v.slice(cols);
            let mut scores = qi.dot(&ki.t());
            scores *= scale;
            softmax_rows_masked(&mut scores, &seq.mask);
            let mut weights = scores.clone();
            let drop = apply_dropout(&mut weights, cfg.dropout_rate, &mut dropout_rng);
            concat.slice_mut(cols).assign(&weights.dot(&vi));
            att.push(scores);
            att_drop.push(drop);
        }

        let mut attn_out = concat.dot(&layer.wo) + &layer.bo;
        let attn_out_drop = apply_dropout(&mut attn_out, cfg.dropout_rate, &mut dropout_rng);
        let r1 = &x_in + &attn_out;
        let (y1, ln1) = layer_norm(&r1, &layer.ln1_gain, &layer.ln1_bias);

        let ffn_pre = y1.dot(&layer.ffn_w1) + &layer.ffn_b1;
        let mut ffn_out = relu(&ffn_pre).dot(&layer.ffn_w2) + &layer.ffn_b2;
        let ffn_out_drop = apply_dropout(&mut ffn_out, cfg.dropout_rate, &mut dropout_rng);
        let r2 = &y1 + &ffn_out;
        let (y2, ln2) = layer_norm(&r2, &layer.ln2_gain, &layer.ln2_bias);

        x = y2;
        layer_caches.push(LayerCache {
            x_in,
            q,
            k,
            v,
            att,
            att_drop,
            concat,
            attn_out_drop,
            ln1,
            y1,
            ffn_pre,
            ffn_out_drop,
            ln2,
        });
    }

    let lme = x.row(0).to_owned();
    let head = match phase {
        Phase::Pretrain => &params.head1,
        Phase::Finetune => &params.head2,
    };
    let (head_pre, head_hidden, output) = head_forward(head, &lme);

    let cache = SeqCache {
        indices: seq.indices.clone(),
        emb_drop,
        layers: layer_caches,
        lme: lme.clone(),
        head_pre,
        head_hidden,
        phase,
    };
    Ok((ForwardOutput { lme, output }, cache))
}

fn masked(x: &Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x.clone(),
    }
}

/// Accumulates gradients for one sequence into `grads`, given the gradient of
/// the loss with respect to the head output.
pub fn backward_one(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &SeqCache,
    d_output: &Array1<f64>,
    grads: &mut ModelParams,
) {
    let d = cfg.model_size;
    let n_heads = cfg.num_heads;
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let seq_len = cache.indices.len();

    // head backward
    let (head, head_grads) = match cache.phase {
        Phase::Pretrain => (&params.head1, &mut grads.head1),
        Phase::Finetune => (&params.head2, &mut grads.head2),
    };
    head_grads.w2 += &outer(&cache.head_hidden, d_output);
    head_grads.b2 += d_output;
    let dhidden = d_output.dot(&head.w2.t());
    let dpre = &dhidden * &cache.head_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    head_grads.w1 += &outer(&cache.lme, &dpre);
    head_grads.b1 += &dpre;
    let dlme = dpre.dot(&head.w1.t());

    let mut dy = Array2::zeros((seq_len, d));
    dy.row_mut(0).assign(&dlme);

    for (layer, lc, lg) in itertools_rev(&params.layers, &cache.layers, &mut grads.layers) {
        // LN2
        let dr2 = layer_norm_backward(&dy, &lc.ln2, &layer.ln2_gain, &mut lg.ln2_gain, &mut lg.ln2_bias);
        let mut dy1 = dr2.clone();
        let dffn_out = masked(&dr2, &lc.ffn_out_drop);

        // FFN
        let act = relu(&lc.ffn_pre);
        lg.ffn_w2 += &act.t().dot(&dffn_out);
        lg.ffn_b2 += &dffn_out.sum_axis(Axis(0));
        let dact = dffn_out.dot(&layer.ffn_w2.t());
        let dffn_pre = &dact * &lc.ffn_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        lg.ffn_w1 += &lc.y1.t().dot(&dffn_pre);
        lg.ffn_b1 += &dffn_pre.sum_axis(Axis(0));
        dy1 += &dffn_pre.dot(&layer.ffn_w1.t());

        // LN1
        let dr1 = layer_norm_backward(&dy1, &lc.ln1, &layer.ln1_gain, &mut lg.ln1_gain, &mut lg.ln1_bias);
        let mut dx_in = dr1.clone();
        let dattn_out = masked(&dr1, &lc.attn_out_drop);

        // output projection
        lg.wo += &lc.concat.t().dot(&dattn_out);
        lg.bo += &dattn_out.sum_axis(Axis(0));
        let dconcat = dattn_out.dot(&layer.wo.t());

        // per-head attention backward
        let mut dq = Array2::zeros((seq_len, d));
        let mut dk_grad = Array2::zeros((seq_len, d));
        let mut dv = Array2::zeros((seq_len, d));
        for h in 0..n_heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let qi = lc.q.slice(cols);
            let ki = lc.k.slice(cols);
            let vi = lc.v.slice(cols);
            let dhead_ctx = dconcat.slice(cols);
            let weights = masked(&lc.att[h], &lc.att_drop[h]);
            let mut da = dhead_ctx.dot(&vi.t());
            dv.slice_mut(cols)
                .assign(&weights.t().dot(&dhead_ctx));
            if let Some(m) = &lc.att_drop[h] {
                da *= m;
            }
            // softmax backward, rowwise
            let att = &lc.att[h];
            let mut ds = Array2::zeros((seq_len, seq_len));
            for r in 0..seq_len {
                let dot: f64 = (0..seq_len).map(|j| da[[r, j]] * att[[r, j]]).sum();
                for j in 0..seq_len {
                    ds[[r, j]] = att[[r, j]] * (da[[r, j]] - dot);
                }
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&ki));
            dk_grad.slice_mut(cols).assign(&ds.t().dot(&qi));
        }

        lg.wq += &lc.x_in.t().dot(&dq);
        lg.bq += &dq.sum_axis(Axis(0));
        dx_in += &dq.dot(&layer.wq.t());
        lg.wk += &lc.x_in.t().dot(&dk_grad);
        lg.bk += &dk_grad.sum_axis(Axis(0));
        dx_in += &dk_grad.dot(&layer.wk.t());
        lg.wv += &lc.x_in.t().dot(&dv);
        lg.bv += &dv.sum_axis(Axis(0));
        dx_in += &dv.dot(&layer.wv.t());

        dy = dx_in;
    }

    let dx0 = match &cache.emb_drop {
        Some(m) => dy * m,
        None => dy,
    };
    for (pos, &idx) in cache.indices.iter().enumerate() {
        let mut row = grads.embeddings.row_mut(idx);
        row += &dx0.row(pos);
    }
}

/// Zips layers, caches and gradient slots in reverse order.
fn itertools_rev<'a>(
    layers: &'a [LayerParams],
    caches: &'a [LayerCache],
    grads: &'a mut [LayerParams],
) -> impl Iterator<Item = (&'a LayerParams, &'a LayerCache, &'a mut LayerParams)> {
    layers
        .iter()
        .rev()
        .zip(caches.iter().rev())
        .zip(grads.iter_mut().rev())
        .map(|((l, c), g)| (l, c, g))
}
