//! Dynamic loss network.
//!
//! Five per-position statistics of the student's predictions are averaged
//! over the batch, z-scored with running statistics, summarized by a GRU and
//! mapped by a 4-layer ReLU MLP plus sigmoid to the regularization weight
//! `lambda` in (0, 1).
//!
//! Feature columns:
//!
//! | idx | feature                                   |
//! |-----|-------------------------------------------|
//! | 0   | confidence, max softmax probability       |
//! | 1   | probability of the target token           |
//! | 2   | error margin, confidence - target prob    |
//! | 3   | entropy / ln V                            |
//! | 4   | per-position cross-entropy                |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mlp::{Mlp, MlpTrace};
use crate::tensor::{Array, Parameters, Scalar};

pub const N_FEATURES: usize = 5;
pub const NORM_EPS: f64 = 1e-5;

/// `(len x 5)` batch-averaged feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub len: usize,
    pub data: Vec<f64>,
}

impl FeatureSequence {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * N_FEATURES..(t + 1) * N_FEATURES]
    }

    pub fn column(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(k).step_by(N_FEATURES).copied()
    }
}

/// Statistics of one softmax row against its target.
fn row_features<T: Scalar>(row: &[T], target: usize) -> [f64; N_FEATURES] {
    let vocab = row.len();
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.f64()));
    let sum: f64 = row.iter().map(|&v| (v.f64() - max).exp()).sum();
    let lse = max + sum.ln();
    let mut top = 0.0f64;
    let mut entropy = 0.0f64;
    for &v in row {
        let logp = v.f64() - lse;
        let p = logp.exp();
        top = top.max(p);
        if p > 0.0 {
            entropy -= p * logp;
        }
    }
    let target_logp = row[target].f64() - lse;
    let target_p = target_logp.exp();
    let norm_entropy = if vocab > 1 {
        (entropy / (vocab as f64).ln()).clamp(0.0, 1.0)
    } else {
        0.0
    };
    [top, target_p, (top - target_p).max(0.0), norm_entropy, (-target_logp).max(0.0)]
}

/// Per-position statistics of `logits (batch*len x V)`, averaged over the batch.
pub fn extract_features<T: Scalar>(
    logits: &[T],
    targets: &[usize],
    batch: usize,
    len: usize,
    vocab: usize,
) -> FeatureSequence {
    assert_eq!(logits.len(), batch * len * vocab, "logits shape");
    assert_eq!(targets.len(), batch * len, "targets shape");
    let mut data = vec![0.0; len * N_FEATURES];
    for b in 0..batch {
        for t in 0..len {
            let r = b * len + t;
            let f = row_features(&logits[r * vocab..(r + 1) * vocab], targets[r]);
            for k in 0..N_FEATURES {
                data[t * N_FEATURES + k] += f[k];
            }
        }
    }
    let inv = 1.0 / batch as f64;
    data.iter_mut().for_each(|x| *x *= inv);
    FeatureSequence { len, data }
}

/// Running per-feature mean and variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormState {
    pub mean: [f64; N_FEATURES],
    pub var: [f64; N_FEATURES],
    pub momentum: f64,
    pub count: u64,
}

impl Default for FeatureNormState {
    fn default() -> Self {
        Self {
            mean: [0.0; N_FEATURES],
            var: [1.0; N_FEATURES],
            momentum: 0.99,
            count: 0,
        }
    }
}

/// Z-scores `f` with the running statistics; in training mode the state is
/// first moved towards this sequence's per-feature mean and variance.
pub fn normalize_features(f: &FeatureSequence, state: &mut FeatureNormState, training: bool) -> FeatureSequence {
    if training && f.len > 0 {
        let m = state.momentum;
        for k in 0..N_FEATURES {
            let mean = f.column(k).sum::<f64>() / f.len as f64;
            let var = f.column(k).map(|x| (x - mean).powi(2)).sum::<f64>() / f.len as f64;
            state.mean[k] = m * state.mean[k] + (1.0 - m) * mean;
            state.var[k] = m * state.var[k] + (1.0 - m) * var;
        }
        state.count += 1;
    }
    let mut data = f.data.clone();
    for row in data.chunks_exact_mut(N_FEATURES) {
        for k in 0..N_FEATURES {
            row[k] = (row[k] - state.mean[k]) / (state.var[k] + NORM_EPS).sqrt();
        }
    }
    FeatureSequence { len: f.len, data }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DlnConfig {
    pub hidden: usize,
    /// Hidden widths of the 4-layer head (3 hidden layers, scalar output).
    pub mlp_widths: [usize; 3],
}

impl Default for DlnConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            mlp_widths: [64, 64, 32],
        }
    }
}

/// GRU (gate order reset, update, candidate) plus the 4-layer head.
#[derive(Clone, Debug, PartialEq)]
pub struct DlnParams<T> {
    /// `(5 x 3H)`.
    pub w_ih: Array<T>,
    /// `(H x 3H)`.
    pub w_hh: Array<T>,
    pub b_ih: Array<T>,
    pub b_hh: Array<T>,
    pub head: Mlp<T>,
}

impl<T: Scalar> Parameters<T> for DlnParams<T> {
    fn named_arrays(&self) -> Vec<(String, &Array<T>)> {
        let mut out = vec![
            ("gru.w_ih".to_string(), &self.w_ih),
            ("gru.w_hh".to_string(), &self.w_hh),
            ("gru.b_ih".to_string(), &self.b_ih),
            ("gru.b_hh".to_string(), &self.b_hh),
        ];
        out.extend(self.head.named_arrays("head"));
        out
    }

    fn named_arrays_mut(&mut self) -> Vec<(String, &mut Array<T>)> {
        let mut out = vec![
            ("gru.w_ih".to_string(), &mut self.w_ih),
            ("gru.w_hh".to_string(), &mut self.w_hh),
            ("gru.b_ih".to_string(), &mut self.b_ih),
            ("gru.b_hh".to_string(), &mut self.b_hh),
        ];
        out.extend(self.head.named_arrays_mut("head"));
        out
    }
}

impl<T: Scalar> DlnParams<T> {
    pub fn init(cfg: &DlnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = cfg.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        let w_ih = Array::uniform(&[N_FEATURES, 3 * h], bound, &mut rng);
        let w_hh = Array::uniform(&[h, 3 * h], bound, &mut rng);
        let b_ih = Array::uniform(&[3 * h], bound, &mut rng);
        let b_hh = Array::uniform(&[3 * h], bound, &mut rng);
        let [a, b, c] = cfg.mlp_widths;
        let head = Mlp::init(&[h, a, b, c, 1], &mut rng);
        Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            head,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape[0]
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero_grads();
        g
    }

    pub fn cast<U: Scalar>(&self) -> DlnParams<U> {
        DlnParams {
            w_ih: self.w_ih.cast(),
            w_hh: self.w_hh.cast(),
            b_ih: self.b_ih.cast(),
            b_hh: self.b_hh.cast(),
            head: self.head.cast(),
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

struct GruStep<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    gh_n: Vec<T>,
}

pub struct DlnTrace<T> {
    steps: Vec<GruStep<T>>,
    head: MlpTrace<T>,
    lambda: T,
}

pub struct DlnOutput<T> {
    pub lambda: T,
    pub raw: T,
    /// Final GRU hidden state.
    pub summary: Vec<T>,
    pub trace: DlnTrace<T>,
}

fn affine<T: Scalar>(x: &[T], w: &Array<T>, b: &Array<T>) -> Vec<T> {
    let cols = w.shape[1];
    let mut y = b.data.clone();
    for (k, &xk) in x.iter().enumerate() {
        for (yj, &wj) in y.iter_mut().zip(&w.data[k * cols..(k + 1) * cols]) {
            *yj += xk * wj;
        }
    }
    y
}

/// GRU over the normalized rows (zero initial state), then head and sigmoid.
pub fn dln_forward<T: Scalar>(f_norm: &FeatureSequence, params: &DlnParams<T>) -> DlnOutput<T> {
    assert!(f_norm.len >= 1, "dln needs at least one feature row");
    let h_dim = params.hidden();
    let mut h = vec![T::zero(); h_dim];
    let mut steps = Vec::with_capacity(f_norm.len);
    for t in 0..f_norm.len {
        let x: Vec<T> = f_norm.row(t).iter().map(|&v| T::of(v)).collect();
        let gi = affine(&x, &params.w_ih, &params.b_ih);
        let gh = affine(&h, &params.w_hh, &params.b_hh);
        let mut r = vec![T::zero(); h_dim];
        let mut z = vec![T::zero(); h_dim];
        let mut n = vec![T::zero(); h_dim];
        let mut next = vec![T::zero(); h_dim];
        for j in 0..h_dim {
            r[j] = sigmoid(gi[j] + gh[j]);
            z[j] = sigmoid(gi[h_dim + j] + gh[h_dim + j]);
            n[j] = (gi[2 * h_dim + j] + r[j] * gh[2 * h_dim + j]).tanh();
            next[j] = (T::one() - z[j]) * n[j] + z[j] * h[j];
        }
        steps.push(GruStep {
            x,
            h_prev: h,
            r,
            z,
            n,
            gh_n: gh[2 * h_dim..].to_vec(),
        });
        h = next;
    }
    let (out, head) = params.head.forward(&h);
    let raw = out[0];
    let lambda = sigmoid(raw);
    DlnOutput {
        lambda,
        raw,
        summary: h,
        trace: DlnTrace { steps, head, lambda },
    }
}

/// Gradients of `upstream * lambda` w.r.t. every DLN parameter (BPTT over all steps).
pub fn dln_grads<T: Scalar>(params: &DlnParams<T>, trace: &DlnTrace<T>, upstream: T) -> DlnParams<T> {
    let mut grads = params.zeros_like();
    let h_dim = params.hidden();
    let lam = trace.lambda;
    let draw = upstream * lam * (T::one() - lam);
    let mut dh = params.head.backward(&trace.head, &[draw], Some(&mut grads.head));
    let three = 3 * h_dim;
    for step in trace.steps.iter().rev() {
        let mut dgi = vec![T::zero(); three];
        let mut dgh = vec![T::zero(); three];
        let mut dh_prev = vec![T::zero(); h_dim];
        for j in 0..h_dim {
            let (r, z, n) = (step.r[j], step.z[j], step.n[j]);
            let dn = dh[j] * (T::one() - z);
            let dz = dh[j] * (step.h_prev[j] - n);
            dh_prev[j] = dh[j] * z;
            let dn_pre = dn * (T::one() - n * n);
            let dr = dn_pre * step.gh_n[j];
            let dr_pre = dr * r * (T::one() - r);
            let dz_pre = dz * z * (T::one() - z);
            dgi[j] = dr_pre;
            dgh[j] = dr_pre;
            dgi[h_dim + j] = dz_pre;
            dgh[h_dim + j] = dz_pre;
            dgi[2 * h_dim + j] = dn_pre;
            dgh[2 * h_dim + j] = dn_pre * r;
        }
        for (k, &xk) in step.x.iter().enumerate() {
            for j in 0..three {
                grads.w_ih.data[k * three + j] += xk * dgi[j];
            }
        }
        for k in 0..h_dim {
            let hk = step.h_prev[k];
            let row = &params.w_hh.data[k * three..(k + 1) * three];
            let mut acc = T::zero();
            for j in 0..three {
                grads.w_hh.data[k * three + j] += hk * dgh[j];
                acc += row[j] * dgh[j];
            }
            dh_prev[k] += acc;
        }
        for j in 0..three {
            grads.b_ih.data[j] += dgi[j];
            grads.b_hh.data[j] += dgh[j];
        }
        dh = dh_prev;
    }
    grads
}
