//! Layer normalization and GELU.

use crate::tensor::{Array, Scalar};

pub const LN_EPS: f64 = 1e-5;

pub struct NormCache<T> {
    /// Normalized input before gain/bias.
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

/// Per-row layer normalization over the trailing `dim` features.
pub fn layer_norm<T: Scalar>(x: &[T], gain: &Array<T>, bias: &Array<T>) -> (Vec<T>, NormCache<T>) {
    let dim = gain.len();
    let rows = x.len() / dim;
    let eps = T::of(LN_EPS);
    let inv_dim = T::one() / T::of(dim as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().copied().sum::<T>() * inv_dim;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_dim;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..dim {
            let xh = (row[j] - mean) * rs;
            xhat[r * dim + j] = xh;
            y[r * dim + j] = xh * gain.data[j] + bias.data[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Returns `dx`, accumulating into `dgain`/`dbias`.
pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    gain: &Array<T>,
    dgain: &mut Array<T>,
    dbias: &mut Array<T>,
) -> Vec<T> {
    let dim = gain.len();
    let rows = dy.len() / dim;
    let inv_dim = T::one() / T::of(dim as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut g = vec![T::zero(); dim];
    for r in 0..rows {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        for j in 0..dim {
            dgain.data[j] += dyr[j] * xh[j];
            dbias.data[j] += dyr[j];
            g[j] = dyr[j] * gain.data[j];
        }
        let mean_g = g.iter().copied().sum::<T>() * inv_dim;
        let mean_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_dim;
        for j in 0..dim {
            dx[r * dim + j] = cache.rstd[r] * (g[j] - mean_g - xh[j] * mean_gx);
        }
    }
    dx
}

const GELU_C: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    half * x * (T::one() + (k * (x + T::of(GELU_C) * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    let inner = k * (x + T::of(GELU_C) * x * x * x);
    let th = inner.tanh();
    let dinner = k * (T::one() + T::of(3.0 * GELU_C) * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * dinner
}
