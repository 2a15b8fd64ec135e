//! The two training losses.

use ndarray::Array1;

/// Floor for the squared norm in the abnormal branch; the loss is singular
/// at x = 0.
pub const HYPERSPHERE_EPS: f64 = 1e-9;

/// Cross-entropy of a softmax over two logits against the true class.
pub fn bce_loss(logits: &Array1<f64>, label: usize) -> f64 {
    bce_loss_grad(logits, label).0
}

/// Loss and gradient with respect to the logits, log-sum-exp stabilized.
pub fn bce_loss_grad(logits: &Array1<f64>, label: usize) -> (f64, Array1<f64>) {
    debug_assert_eq!(logits.len(), 2);
    debug_assert!(label < 2);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|l| (l - max).exp());
    let sum: f64 = exps.sum();
    let lse = max + sum.ln();
    let loss = lse - logits[label];
    let mut grad = exps / sum;
    grad[label] -= 1.0;
    (loss, grad)
}

/// Hyperspherical one-class loss for a single log representation.
///
/// Label 0 (target-system log) pays the squared distance to the center;
/// label 1 (abnormal sample) pays `-ln(1 - exp(-(squared distance)))`, which
/// vanishes as the representation moves away from the center.
pub fn hyperspherical_loss(x: &Array1<f64>, label: usize) -> f64 {
    hyperspherical_loss_grad(x, label).0
}

/// Loss and gradient with respect to x.
pub fn hyperspherical_loss_grad(x: &Array1<f64>, label: usize) -> (f64, Array1<f64>) {
    debug_assert!(label < 2);
    let sq_norm: f64 = x.iter().map(|v| v * v).sum();
    if label == 0 {
        return (sq_norm, x.mapv(|v| 2.0 * v));
    }
    if sq_norm < HYPERSPHERE_EPS {
        // inside the clamp the loss is treated as constant
        let loss = -(-(-HYPERSPHERE_EPS).exp_m1()).ln();
        return (loss, Array1::zeros(x.len()));
    }
    let loss = -(-(-sq_norm).exp_m1()).ln();
    let dloss_dsq = -1.0 / sq_norm.exp_m1();
    (loss, x.mapv(|v| 2.0 * v * dloss_dsq))
}
