//! AdamW with decoupled weight decay, cosine schedule with linear warmup,
//! and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Array, Parameters, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn student() -> Self {
        Self::new(2e-4, 0.15)
    }

    pub fn teacher() -> Self {
        Self::new(2e-6, 0.01)
    }

    pub fn dln() -> Self {
        Self::new(5e-7, 0.01)
    }

    /// `prefix` names the owning component in error messages.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("{prefix}_lr"), "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("{prefix}_weight_decay"), "must be non-negative"));
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{prefix}_{key}"), "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(format!("{prefix}_eps"), "must be positive"));
        }
        Ok(())
    }
}

/// First/second moments per parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub m: Vec<Array<T>>,
    pub v: Vec<Array<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new<P: Parameters<T>>(params: &P) -> Self {
        let m: Vec<Array<T>> = params.named_arrays().iter().map(|(_, a)| a.zeros_like()).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One AdamW update at learning rate `lr_now`.
pub fn adamw_step<T: Scalar, P: Parameters<T>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamWState<T>,
    cfg: &OptimizerConfig,
    lr_now: f64,
) -> Result<()> {
    let grads = grads.named_arrays();
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::Numerical(format!("non-finite gradient in `{name}`")));
    }
    let mut params = params.named_arrays_mut();
    if params.len() != grads.len() || state.m.len() != grads.len() {
        return Err(Error::Shape("optimizer state does not match parameter set".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    for (k, ((_, p), (_, g))) in params.iter_mut().zip(&grads).enumerate() {
        if p.shape != g.shape {
            return Err(Error::Shape(format!("gradient shape {:?} vs param {:?}", g.shape, p.shape)));
        }
        let (m, v) = (&mut state.m[k].data, &mut state.v[k].data);
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m[i] = b1 * m[i] + one_b1 * gi;
            v[i] = b2 * v[i] + one_b2 * gi * gi;
            let m_hat = m[i].f64() / bc1;
            let v_hat = v[i].f64() / bc2;
            let w = p.data[i].f64();
            let update = m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * w;
            p.data[i] = T::of(w - lr_now * update);
        }
    }
    Ok(())
}

/// Linear warmup followed by a half-cosine from `lr_max` to `lr_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub lr_max: f64,
    pub lr_min: f64,
}

impl CosineSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        cosine_warmup_lr(step, self.total_steps, self.warmup_steps, self.lr_max, self.lr_min)
    }
}

pub fn cosine_warmup_lr(step: u64, total_steps: u64, warmup_steps: u64, lr_max: f64, lr_min: f64) -> f64 {
    if step < warmup_steps {
        return lr_max * (step + 1) as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps).max(1);
    let progress = (step.min(total_steps) - warmup_steps) as f64 / span as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Global L2 norm over every array.
pub fn global_norm<T: Scalar, P: Parameters<T>>(grads: &P) -> f64 {
    grads.named_arrays().iter().map(|(_, a)| a.sum_sq()).sum::<f64>().sqrt()
}

/// Rescales all arrays jointly so the global norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_grad_norm<T: Scalar, P: Parameters<T>>(grads: &mut P, max_norm: f64) -> f64 {
    let total = global_norm(grads);
    if total > max_norm && total.is_finite() {
        let scale = T::of(max_norm / total);
        for (_, a) in grads.named_arrays_mut() {
            a.data.iter_mut().for_each(|x| *x *= scale);
        }
    }
    total
}
