//! Causal long convolution through zero-padded FFTs.
//!
//! Signals are `(batch, len, channels)` row-major; filters are `(len, channels)`.
//! Two real batch rows are packed into one complex signal (real and imaginary
//! parts), which is exact because the filter is real. Transforms always run
//! in f64: single-precision roundoff would otherwise spread across all
//! positions, including ones before a perturbed input.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Transform length: next power of two at or above `2 * len`.
pub fn fft_len(len: usize) -> usize {
    (2 * len).next_power_of_two()
}

const ZERO: Complex<f64> = Complex { re: 0.0, im: 0.0 };

struct Plan {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Plan {
    fn new(len: usize) -> Self {
        let n = fft_len(len);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            scratch: vec![ZERO; scratch_len],
        }
    }

    fn forward(&mut self, buf: &mut [Complex<f64>]) {
        self.forward.process_with_scratch(buf, &mut self.scratch);
    }

    fn inverse(&mut self, buf: &mut [Complex<f64>]) {
        self.inverse.process_with_scratch(buf, &mut self.scratch);
    }

    fn zeroed(&self) -> Vec<Complex<f64>> {
        vec![ZERO; self.n]
    }
}

/// Loads channel `c` of up to two batch rows into `buf` as `re + i*im`.
fn pack<T: Scalar>(
    buf: &mut [Complex<f64>],
    x: &[T],
    rows: (usize, Option<usize>),
    len: usize,
    channels: usize,
    c: usize,
) {
    buf.iter_mut().for_each(|z| *z = ZERO);
    for t in 0..len {
        let re = x[(rows.0 * len + t) * channels + c].f64();
        let im = rows.1.map_or(0.0, |b| x[(b * len + t) * channels + c].f64());
        buf[t] = Complex::new(re, im);
    }
}

fn unpack<T: Scalar>(
    buf: &[Complex<f64>],
    y: &mut [T],
    rows: (usize, Option<usize>),
    len: usize,
    channels: usize,
    c: usize,
    scale: f64,
) {
    for t in 0..len {
        y[(rows.0 * len + t) * channels + c] = T::of(buf[t].re * scale);
        if let Some(b) = rows.1 {
            y[(b * len + t) * channels + c] = T::of(buf[t].im * scale);
        }
    }
}

fn row_pairs(batch: usize) -> impl Iterator<Item = (usize, Option<usize>)> {
    (0..batch).step_by(2).map(move |b| (b, (b + 1 < batch).then_some(b + 1)))
}

fn filter_spectrum<T: Scalar>(
    plan: &mut Plan,
    h: &[T],
    len: usize,
    channels: usize,
    c: usize,
) -> Vec<Complex<f64>> {
    let mut hf = plan.zeroed();
    for t in 0..len {
        hf[t] = Complex::new(h[t * channels + c].f64(), 0.0);
    }
    plan.forward(&mut hf);
    hf
}

fn check_shapes<T>(u: &[T], h: &[T], batch: usize, len: usize, channels: usize) -> Result<()> {
    if u.len() != batch * len * channels || h.len() != len * channels {
        return Err(Error::Shape(format!(
            "fft conv: signal {} and filter {} do not fit (B={batch}, L={len}, D={channels})",
            u.len(),
            h.len()
        )));
    }
    Ok(())
}

/// `y[b][t][d] = sum_{s<=t} h[s][d] * u[b][t-s][d]`.
pub fn fft_causal_conv<T: Scalar>(
    u: &[T],
    h: &[T],
    batch: usize,
    len: usize,
    channels: usize,
) -> Result<Vec<T>> {
    check_shapes(u, h, batch, len, channels)?;
    let mut y = vec![T::zero(); u.len()];
    if len == 0 {
        return Ok(y);
    }
    let mut plan = Plan::new(len);
    let scale = 1.0 / plan.n as f64;
    let mut buf = plan.zeroed();
    for c in 0..channels {
        let hf = filter_spectrum(&mut plan, h, len, channels, c);
        for rows in row_pairs(batch) {
            pack(&mut buf, u, rows, len, channels, c);
            plan.forward(&mut buf);
            for (z, w) in buf.iter_mut().zip(&hf) {
                *z *= *w;
            }
            plan.inverse(&mut buf);
            unpack(&buf, &mut y, rows, len, channels, c, scale);
        }
    }
    Ok(y)
}

/// Gradients of [`fft_causal_conv`] with respect to the signal and the filter.
///
/// `du[b][s][d] = sum_{t>=s} dy[b][t][d] h[t-s][d]` and
/// `dh[s][d] = sum_b sum_{t>=s} dy[b][t][d] u[b][t-s][d]`; both are
/// correlations, computed as products with conjugated spectra.
pub fn fft_causal_conv_backward<T: Scalar>(
    dy: &[T],
    u: &[T],
    h: &[T],
    batch: usize,
    len: usize,
    channels: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    check_shapes(u, h, batch, len, channels)?;
    check_shapes(dy, h, batch, len, channels)?;
    let mut du = vec![T::zero(); u.len()];
    let mut dh = vec![T::zero(); h.len()];
    if len == 0 {
        return Ok((du, dh));
    }
    let mut plan = Plan::new(len);
    let scale = 1.0 / plan.n as f64;
    let mut gbuf = plan.zeroed();
    let mut ubuf = plan.zeroed();
    let mut acc = plan.zeroed();
    for c in 0..channels {
        let hf = filter_spectrum(&mut plan, h, len, channels, c);
        acc.fill(ZERO);
        for rows in row_pairs(batch) {
            pack(&mut gbuf, dy, rows, len, channels, c);
            pack(&mut ubuf, u, rows, len, channels, c);
            plan.forward(&mut gbuf);
            plan.forward(&mut ubuf);
            // Re(IFFT(G conj(U))) = sum over the packed pair of corr(dy_b, u_b);
            // the cross terms land in the imaginary part.
            for ((a, g), w) in acc.iter_mut().zip(&gbuf).zip(&ubuf) {
                *a += *g * w.conj();
            }
            for (g, w) in gbuf.iter_mut().zip(&hf) {
                *g *= w.conj();
            }
            plan.inverse(&mut gbuf);
            unpack(&gbuf, &mut du, rows, len, channels, c, scale);
        }
        plan.inverse(&mut acc);
        for s in 0..len {
            dh[s * channels + c] = T::of(acc[s].re * scale);
        }
    }
    Ok((du, dh))
}
