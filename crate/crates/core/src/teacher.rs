//! Memory-augmented teacher.
//!
//! The teacher replays `(summary, lambda, realized loss)` experiences,
//! sampled in proportion to their loss, and regresses the loss with a Huber
//! objective. Its derivative with respect to the `lambda` input is the
//! training signal handed back to the loss network.

use std::collections::VecDeque;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::tensor::{Array, Parameters, Scalar};

pub const LOSS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub summary: Vec<f64>,
    pub lambda: f64,
    pub student_loss: f64,
    pub step: u64,
}

impl Experience {
    fn validate(&self) -> Result<()> {
        if !self.summary.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidExperience("non-finite summary".into()));
        }
        if !self.lambda.is_finite() {
            return Err(Error::InvalidExperience("non-finite lambda".into()));
        }
        if !self.student_loss.is_finite() || self.student_loss < 0.0 {
            return Err(Error::InvalidExperience(format!("student loss {}", self.student_loss)));
        }
        Ok(())
    }
}

/// Fixed-capacity FIFO of experiences.
#[derive(Clone, Debug)]
pub struct MemoryBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// Appends `exp`, evicting the oldest entry when full.
    pub fn push(&mut self, exp: Experience) -> Result<()> {
        exp.validate()?;
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(exp);
        Ok(())
    }

    /// `k` draws with replacement, `P(i) ∝ max(loss_i, 1e-6)^priority`.
    pub fn sample_prioritized<R: Rng>(&self, k: usize, priority: f64, rng: &mut R) -> Result<Vec<&Experience>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let weights: Vec<f64> = self
            .items
            .iter()
            .map(|e| e.student_loss.max(LOSS_FLOOR).powf(priority))
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Numerical(format!("sampling weights: {e}")))?;
        Ok((0..k).map(|_| &self.items[dist.sample(rng)]).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub hidden: usize,
    pub huber_delta: f64,
    pub priority: f64,
    pub batch: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            huber_delta: 1.0,
            priority: 1.0,
            batch: 32,
        }
    }
}

/// Loss predictor over `[summary, lambda]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherParams<T> {
    pub mlp: Mlp<T>,
}

impl<T: Scalar> Parameters<T> for TeacherParams<T> {
    fn named_arrays(&self) -> Vec<(String, &Array<T>)> {
        self.mlp.named_arrays("mlp")
    }

    fn named_arrays_mut(&mut self) -> Vec<(String, &mut Array<T>)> {
        self.mlp.named_arrays_mut("mlp")
    }
}

impl<T: Scalar> TeacherParams<T> {
    /// Three affine layers `(summary_dim + 1) -> hidden -> hidden -> 1`.
    pub fn init(summary_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            mlp: Mlp::init(&[summary_dim + 1, hidden, hidden, 1], &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mlp: self.mlp.zeros_like(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> TeacherParams<U> {
        TeacherParams { mlp: self.mlp.cast() }
    }
}

fn teacher_input<T: Scalar>(summary: &[f64], lambda: f64) -> Vec<T> {
    summary.iter().chain(std::iter::once(&lambda)).map(|&x| T::of(x)).collect()
}

pub fn teacher_predict<T: Scalar>(summary: &[f64], lambda: f64, params: &TeacherParams<T>) -> T {
    params.mlp.forward(&teacher_input::<T>(summary, lambda)).0[0]
}

pub fn huber(pred: f64, target: f64, delta: f64) -> f64 {
    let d = (pred - target).abs();
    if d <= delta {
        0.5 * d * d
    } else {
        delta * (d - 0.5 * delta)
    }
}

/// d huber / d pred.
pub fn huber_grad(pred: f64, target: f64, delta: f64) -> f64 {
    (pred - target).clamp(-delta, delta)
}

/// Mean Huber loss of predictions against a prioritized sample and its gradients.
pub fn teacher_step<T: Scalar, R: Rng>(
    buffer: &MemoryBuffer,
    params: &TeacherParams<T>,
    cfg: &TeacherConfig,
    rng: &mut R,
) -> Result<(TeacherParams<T>, f64)> {
    let batch = buffer.sample_prioritized(cfg.batch, cfg.priority, rng)?;
    Ok(teacher_loss_and_grads(&batch, params, cfg.huber_delta))
}

/// Deterministic core of [`teacher_step`] on an explicit sample.
pub fn teacher_loss_and_grads<T: Scalar>(
    batch: &[&Experience],
    params: &TeacherParams<T>,
    delta: f64,
) -> (TeacherParams<T>, f64) {
    let mut grads = params.zeros_like();
    let inv = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for e in batch {
        let (out, trace) = params.mlp.forward(&teacher_input::<T>(&e.summary, e.lambda));
        let pred = out[0].f64();
        total += huber(pred, e.student_loss, delta);
        let g = T::of(huber_grad(pred, e.student_loss, delta) * inv);
        params.mlp.backward(&trace, &[g], Some(&mut grads.mlp));
    }
    (grads, total * inv)
}

/// `d teacher_predict / d lambda` with the teacher held fixed.
pub fn dln_feedback<T: Scalar>(summary: &[f64], lambda: f64, params: &TeacherParams<T>) -> T {
    let (_, trace) = params.mlp.forward(&teacher_input::<T>(summary, lambda));
    let dx = params.mlp.backward(&trace, &[T::one()], None);
    dx[summary.len()]
}
