//! Small dense ReLU networks used by the loss network and the teacher.

use rand::Rng;

use crate::tensor::{Array, Scalar};

/// Affine layers with ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub weights: Vec<Array<T>>,
    pub biases: Vec<Array<T>>,
}

pub struct MlpTrace<T> {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<T>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights and zero biases for `widths = [in, h1, .., out]`.
    pub fn init<R: Rng>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2);
        let weights = widths.windows(2).map(|w| Array::glorot(w[0], w[1], rng)).collect();
        let biases = widths[1..].iter().map(|&w| Array::zeros(&[w])).collect();
        Self { weights, biases }
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].shape[0]
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, MlpTrace<T>) {
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.n_layers() - 1);
        let mut h = x.to_vec();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (d_in, d_out) = (w.shape[0], w.shape[1]);
            let mut y = b.data.clone();
            for (k, &hk) in h.iter().enumerate().take(d_in) {
                let row = &w.data[k * d_out..(k + 1) * d_out];
                for (yj, &wj) in y.iter_mut().zip(row) {
                    *yj += hk * wj;
                }
            }
            if i + 1 < self.n_layers() {
                let act: Vec<T> = y.iter().map(|&v| v.max(T::zero())).collect();
                pre.push(y);
                inputs.push(act.clone());
                h = act;
            } else {
                h = y;
            }
        }
        (h, MlpTrace { inputs, pre })
    }

    /// Backward pass; accumulates into `grads` when given and returns `d input`.
    pub fn backward(&self, trace: &MlpTrace<T>, dout: &[T], mut grads: Option<&mut Mlp<T>>) -> Vec<T> {
        let mut g = dout.to_vec();
        for i in (0..self.n_layers()).rev() {
            let w = &self.weights[i];
            let (d_in, d_out) = (w.shape[0], w.shape[1]);
            let x = &trace.inputs[i];
            if let Some(gr) = grads.as_deref_mut() {
                for k in 0..d_in {
                    for j in 0..d_out {
                        gr.weights[i].data[k * d_out + j] += x[k] * g[j];
                    }
                }
                for j in 0..d_out {
                    gr.biases[i].data[j] += g[j];
                }
            }
            let mut dx = vec![T::zero(); d_in];
            for (k, dxk) in dx.iter_mut().enumerate() {
                let row = &w.data[k * d_out..(k + 1) * d_out];
                *dxk = row.iter().zip(&g).map(|(&a, &b)| a * b).sum();
            }
            if i > 0 {
                for (v, &p) in dx.iter_mut().zip(&trace.pre[i - 1]) {
                    if p <= T::zero() {
                        *v = T::zero();
                    }
                }
            }
            g = dx;
        }
        g
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(Array::zeros_like).collect(),
            biases: self.biases.iter().map(Array::zeros_like).collect(),
        }
    }

    pub fn named_arrays(&self, prefix: &str) -> Vec<(String, &Array<T>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("{prefix}.{i}.weight"), w));
            out.push((format!("{prefix}.{i}.bias"), b));
        }
        out
    }

    pub fn named_arrays_mut(&mut self, prefix: &str) -> Vec<(String, &mut Array<T>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.weights.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            out.push((format!("{prefix}.{i}.weight"), w));
            out.push((format!("{prefix}.{i}.bias"), b));
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            weights: self.weights.iter().map(Array::cast).collect(),
            biases: self.biases.iter().map(Array::cast).collect(),
        }
    }
}
