//! Depthwise causal short convolution.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

fn check<T>(u: &[T], kernels: &[T], batch: usize, len: usize, channels: usize, k: usize) -> Result<()> {
    if k % 2 == 0 {
        return Err(Error::Shape(format!("short conv kernel size {k} must be odd")));
    }
    if u.len() != batch * len * channels || kernels.len() != channels * k {
        return Err(Error::Shape(format!(
            "short conv: signal {} / kernels {} do not fit (B={batch}, L={len}, C={channels}, k={k})",
            u.len(),
            kernels.len()
        )));
    }
    Ok(())
}

/// `y[b][t][c] = sum_{s<k} kernels[c][s] * u[b][t-s][c]`, zero before `t = 0`.
pub fn short_conv<T: Scalar>(
    u: &[T],
    kernels: &[T],
    batch: usize,
    len: usize,
    channels: usize,
    k: usize,
) -> Result<Vec<T>> {
    check(u, kernels, batch, len, channels, k)?;
    let mut y = vec![T::zero(); u.len()];
    for b in 0..batch {
        for t in 0..len {
            let out = &mut y[(b * len + t) * channels..(b * len + t + 1) * channels];
            for s in 0..k.min(t + 1) {
                let src = &u[(b * len + t - s) * channels..(b * len + t - s + 1) * channels];
                for c in 0..channels {
                    out[c] += kernels[c * k + s] * src[c];
                }
            }
        }
    }
    Ok(y)
}

/// Returns `du` and accumulates the kernel gradient into `dkernels`.
pub fn short_conv_backward<T: Scalar>(
    dy: &[T],
    u: &[T],
    kernels: &[T],
    dkernels: &mut [T],
    batch: usize,
    len: usize,
    channels: usize,
    k: usize,
) -> Result<Vec<T>> {
    check(u, kernels, batch, len, channels, k)?;
    let mut du = vec![T::zero(); u.len()];
    for b in 0..batch {
        for t in 0..len {
            let g = &dy[(b * len + t) * channels..(b * len + t + 1) * channels];
            for s in 0..k.min(t + 1) {
                let row = (b * len + t - s) * channels;
                for c in 0..channels {
                    du[row + c] += kernels[c * k + s] * g[c];
                    dkernels[c * k + s] += u[row + c] * g[c];
                }
            }
        }
    }
    Ok(du)
}
