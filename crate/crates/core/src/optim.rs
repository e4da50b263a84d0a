//! AdamW with decoupled weight decay, step-decayed learning rate and
//! global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamwConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamwConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamwState<R> {
    cfg: AdamwConfig,
    m: Vec<R>,
    v: Vec<R>,
    step: u64,
}

impl<R: Real> AdamwState<R> {
    pub fn new(len: usize, cfg: AdamwConfig) -> Self {
        Self { cfg, m: vec![R::zero(); len], v: vec![R::zero(); len], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[R] {
        &self.m
    }

    pub fn second_moment(&self) -> &[R] {
        &self.v
    }

    /// `θ ← θ − lr·(m̂/(√v̂ + ε) + λθ)` with bias-corrected moments.
    pub fn step(&mut self, theta: &mut [R], grad: &[R], lr: f64) {
        assert_eq!(theta.len(), self.m.len(), "parameter length");
        assert_eq!(grad.len(), self.m.len(), "gradient length");
        self.step += 1;
        let c = self.cfg;
        let (b1, b2) = (R::of(c.beta1), R::of(c.beta2));
        let bc1 = R::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = R::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps, wd) = (R::of(lr), R::of(c.eps), R::of(c.weight_decay));
        for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (R::one() - b1) * g;
            *v = b2 * *v + (R::one() - b2) * g * g;
            let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
            *p -= lr * (update + wd * *p);
        }
    }
}

/// Step schedule: `lr0·decay^⌊iter/every⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { lr0: 5e-4, decay: 0.7, every: 500 }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, iter: usize) -> f64 {
        self.lr0 * self.decay.powi((iter / self.every.max(1)) as i32)
    }
}

/// Scales `grad` in place so its L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm<R: Real>(grad: &mut [R], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = R::of(max_norm / norm);
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
