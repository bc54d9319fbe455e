use super::params::{Grads, ParamSet};
use crate::scalar::Scalar;

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(params: &ParamSet<S>, lr: f64) -> Self {
        let zeros: Vec<Vec<S>> = params.entries().iter().map(|e| vec![S::zero(); e.value.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &Grads<S>) {
        self.step_with_lr(params, grads, self.lr);
    }

    pub fn step_with_lr(&mut self, params: &mut ParamSet<S>, grads: &Grads<S>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let c1 = S::lit(1.0 - self.beta1.powi(t));
        let c2 = S::lit(1.0 - self.beta2.powi(t));
        let (lr_s, eps, decay) = (S::lit(lr), S::lit(self.eps), S::lit(1.0 - lr * self.weight_decay));
        let ids: Vec<_> = (0..params.len()).map(super::params::ParamId).collect();
        for id in ids {
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = params.get_mut(id);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (S::one() - b1) * g[i];
                v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = p[i] * decay - lr_s * mh / (vh.sqrt() + eps);
            }
        }
    }
}
