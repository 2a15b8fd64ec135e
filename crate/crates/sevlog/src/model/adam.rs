//! Adam optimizer over the named-tensor parameter store.

use super::ModelParams;

const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction. Moment buffers mirror the parameter layout;
/// `step` only touches tensors accepted by the filter, so the same optimizer
/// drives both the pretraining set and the finetuning set.
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
}

impl Adam {
    pub fn new(template: &ModelParams, lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            m: template.zeros_like(),
            v: template.zeros_like(),
            t: 0,
            lr,
            beta1,
            beta2,
        }
    }

    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        filter: impl Fn(&str) -> bool,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let grad_tensors = grads.visit();
        let mut param_tensors = params.visit_mut();
        let mut m_tensors = self.m.visit_mut();
        let mut v_tensors = self.v.visit_mut();
        for i in 0..grad_tensors.len() {
            let (name, grad) = &grad_tensors[i];
            if !filter(name) {
                continue;
            }
            let g = grad.as_slice();
            let p = param_tensors[i].1.as_slice_mut();
            let m = m_tensors[i].1.as_slice_mut();
            let v = v_tensors[i].1.as_slice_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}
