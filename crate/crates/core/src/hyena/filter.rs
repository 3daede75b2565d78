//! Implicitly parameterized long-convolution filters.
//!
//! A two-layer sine network maps positional features to `order * dim`
//! filter channels, which are then windowed by `exp(-alpha * t / L)`.

use crate::tensor::{linear, linear_backward, Array, Scalar};

/// `(len x pos_dim)` features: `t/L` followed by sin/cos pairs of
/// geometrically spaced frequencies from 1 to `L/2` cycles per window.
pub fn positional_filter_features<T: Scalar>(len: usize, pos_dim: usize) -> Array<T> {
    assert!(pos_dim % 2 == 1, "pos_dim must be odd");
    let bands = (pos_dim - 1) / 2;
    let top = (len as f64 / 2.0).max(1.0);
    let freqs: Vec<f64> = (0..bands)
        .map(|k| {
            if bands == 1 {
                1.0
            } else {
                top.powf(k as f64 / (bands - 1) as f64)
            }
        })
        .collect();
    let mut out = Array::zeros(&[len, pos_dim]);
    for t in 0..len {
        let pos = t as f64 / len as f64;
        let row = &mut out.data[t * pos_dim..(t + 1) * pos_dim];
        row[0] = T::of(pos);
        for (k, f) in freqs.iter().enumerate() {
            let w = 2.0 * std::f64::consts::PI * f * pos;
            row[1 + 2 * k] = T::of(w.sin());
            row[2 + 2 * k] = T::of(w.cos());
        }
    }
    out
}

/// Borrowed view of a block's filter-network parameters.
pub struct FilterNet<'a, T> {
    pub w1: &'a Array<T>,
    pub b1: &'a Array<T>,
    pub w2: &'a Array<T>,
    pub b2: &'a Array<T>,
    /// `(order x dim)`, the decay rate is `exp(log_decay)`.
    pub log_decay: &'a Array<T>,
}

pub struct FilterNetGrads<'a, T> {
    pub w1: &'a mut Array<T>,
    pub b1: &'a mut Array<T>,
    pub w2: &'a mut Array<T>,
    pub b2: &'a mut Array<T>,
    pub log_decay: &'a mut Array<T>,
}

/// Causal taps `h[n][t][d]`, stored `(order x len x dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank<T> {
    pub order: usize,
    pub len: usize,
    pub dim: usize,
    pub h: Vec<T>,
}

impl<T: Scalar> FilterBank<T> {
    /// Taps of stage `n` as a `(len x dim)` slice.
    pub fn stage(&self, n: usize) -> &[T] {
        &self.h[n * self.len * self.dim..(n + 1) * self.len * self.dim]
    }

    /// First `len` taps of every stage.
    pub fn truncated(&self, len: usize) -> FilterBank<T> {
        assert!(len <= self.len);
        let mut h = Vec::with_capacity(self.order * len * self.dim);
        for n in 0..self.order {
            h.extend_from_slice(&self.stage(n)[..len * self.dim]);
        }
        FilterBank {
            order: self.order,
            len,
            dim: self.dim,
            h,
        }
    }
}

pub struct FilterCache<T> {
    features: Array<T>,
    pre: Vec<T>,
    hidden: Vec<T>,
    raw: Vec<T>,
    window: Vec<T>,
}

/// Generates the filter bank for window length `len`.
pub fn generate_filters<T: Scalar>(
    net: &FilterNet<'_, T>,
    len: usize,
    pos_dim: usize,
) -> (FilterBank<T>, FilterCache<T>) {
    let (order, dim) = (net.log_decay.shape[0], net.log_decay.shape[1]);
    let features = positional_filter_features::<T>(len, pos_dim);
    let pre = linear(&features.data, len, net.w1, Some(net.b1));
    let hidden: Vec<T> = pre.iter().map(|x| x.sin()).collect();
    let raw = linear(&hidden, len, net.w2, Some(net.b2));

    let mut window = vec![T::zero(); order * len * dim];
    let mut h = vec![T::zero(); order * len * dim];
    for n in 0..order {
        for d in 0..dim {
            let alpha = net.log_decay.data[n * dim + d].exp();
            for t in 0..len {
                let pos = T::of(t as f64 / len as f64);
                let w = (-alpha * pos).exp();
                let idx = (n * len + t) * dim + d;
                window[idx] = w;
                h[idx] = raw[t * order * dim + n * dim + d] * w;
            }
        }
    }
    let bank = FilterBank { order, len, dim, h };
    let cache = FilterCache {
        features,
        pre,
        hidden,
        raw,
        window,
    };
    (bank, cache)
}

/// Accumulates filter-network gradients given `dh` shaped like the bank.
pub fn generate_filters_backward<T: Scalar>(
    net: &FilterNet<'_, T>,
    cache: &FilterCache<T>,
    dh: &[T],
    grads: FilterNetGrads<'_, T>,
) {
    let (order, dim) = (net.log_decay.shape[0], net.log_decay.shape[1]);
    let len = cache.features.shape[0];
    let mut draw = vec![T::zero(); len * order * dim];
    for n in 0..order {
        for d in 0..dim {
            let alpha = net.log_decay.data[n * dim + d].exp();
            let mut dalpha = T::zero();
            for t in 0..len {
                let idx = (n * len + t) * dim + d;
                let r = t * order * dim + n * dim + d;
                let g = dh[idx];
                draw[r] = g * cache.window[idx];
                let pos = T::of(t as f64 / len as f64);
                dalpha -= g * cache.raw[r] * cache.window[idx] * pos;
            }
            grads.log_decay.data[n * dim + d] += dalpha * alpha;
        }
    }
    let dhidden = linear_backward(&cache.hidden, &draw, len, net.w2, grads.w2, Some(grads.b2));
    let dpre: Vec<T> = dhidden
        .iter()
        .zip(&cache.pre)
        .map(|(g, p)| *g * p.cos())
        .collect();
    let _ = linear_backward(&cache.features.data, &dpre, len, net.w1, grads.w1, Some(grads.b1));
}
