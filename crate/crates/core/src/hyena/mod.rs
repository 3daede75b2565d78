//! Hyena student: embeddings, order-N Hyena blocks with implicit FFT long
//! convolutions, a GELU MLP per block and a tied output projection.
//!
//! Every activation is laid out `(batch * len, channels)` row-major. The
//! backward pass is hand-written and exact, including through the filter
//! network and both convolution kinds.
//!
//! Parameter count, with `S = order + 1`, `P = filter_pos_dim`,
//! `F = filter_hidden` and `E = mlp_expansion`:
//!
//! ```text
//! V*D + Lmax*D + 2*D
//!   + n_blocks * ( 4*D                        two norms
//!                + D*S*D + S*D                input projection
//!                + S*D*k                      short conv
//!                + P*F + F + F*N*D + N*D      filter network
//!                + N*D                        log decay rates
//!                + D*D + D                    output projection
//!                + 2*E*D*D + E*D + D )        MLP
//! ```

pub mod conv;
pub mod fft;
pub mod filter;
pub mod layers;
pub mod loss;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{linear, linear_backward, Array, Parameters, Scalar};

pub use conv::{short_conv, short_conv_backward};
pub use fft::{fft_causal_conv, fft_causal_conv_backward};
pub use filter::{generate_filters, positional_filter_features, FilterBank, FilterNet};
pub use layers::{gelu, layer_norm};
pub use loss::{cross_entropy, logit_l2};

use filter::{generate_filters_backward, FilterCache, FilterNetGrads};
use layers::{gelu_grad, layer_norm_backward, NormCache};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyenaModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub n_blocks: usize,
    pub order: usize,
    pub short_kernel: usize,
    pub max_seq_len: usize,
    pub filter_pos_dim: usize,
    pub filter_hidden: usize,
    pub mlp_expansion: usize,
    /// Endpoints of the log-spaced initial decay rates.
    pub decay_fastest: f64,
    pub decay_slowest: f64,
    pub embed_init_std: f64,
}

impl Default for HyenaModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 10_000,
            dim: 256,
            n_blocks: 6,
            order: 2,
            short_kernel: 3,
            max_seq_len: 64,
            filter_pos_dim: 17,
            filter_hidden: 64,
            mlp_expansion: 4,
            decay_fastest: 0.3,
            decay_slowest: 30.0,
            embed_init_std: 0.01,
        }
    }
}

impl HyenaModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("dim", self.dim),
            ("n_blocks", self.n_blocks),
            ("order", self.order),
            ("max_seq_len", self.max_seq_len),
            ("filter_hidden", self.filter_hidden),
            ("mlp_expansion", self.mlp_expansion),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.short_kernel % 2 == 0 {
            return Err(Error::config("short_kernel", "must be odd and at least 1"));
        }
        if self.filter_pos_dim % 2 == 0 || self.filter_pos_dim < 3 {
            return Err(Error::config("filter_pos_dim", "must be odd and at least 3"));
        }
        if !(self.decay_fastest > 0.0 && self.decay_slowest > 0.0) {
            return Err(Error::config("decay_fastest", "decay rates must be positive"));
        }
        if !(self.embed_init_std > 0.0) {
            return Err(Error::config("embed_init_std", "must be positive"));
        }
        Ok(())
    }

    pub fn streams(&self) -> usize {
        self.order + 1
    }

    /// Closed-form parameter count (see module docs).
    pub fn param_count(&self) -> usize {
        let (v, d, l, n) = (self.vocab_size, self.dim, self.max_seq_len, self.order);
        let s = n + 1;
        let (p, f, e, k) = (self.filter_pos_dim, self.filter_hidden, self.mlp_expansion, self.short_kernel);
        let block = 4 * d
            + d * s * d
            + s * d
            + s * d * k
            + p * f
            + f
            + f * n * d
            + n * d
            + n * d
            + d * d
            + d
            + 2 * e * d * d
            + e * d
            + d;
        v * d + l * d + 2 * d + self.n_blocks * block
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub norm1_gain: Array<T>,
    pub norm1_bias: Array<T>,
    /// `(D x S*D)`; output streams are ordered `v, x^1 .. x^N`.
    pub in_proj_w: Array<T>,
    pub in_proj_b: Array<T>,
    /// `(S*D x k)` depthwise taps.
    pub short_kernels: Array<T>,
    pub filter_w1: Array<T>,
    pub filter_b1: Array<T>,
    pub filter_w2: Array<T>,
    pub filter_b2: Array<T>,
    pub log_decay: Array<T>,
    pub out_proj_w: Array<T>,
    pub out_proj_b: Array<T>,
    pub norm2_gain: Array<T>,
    pub norm2_bias: Array<T>,
    pub mlp_w1: Array<T>,
    pub mlp_b1: Array<T>,
    pub mlp_w2: Array<T>,
    pub mlp_b2: Array<T>,
}

impl<T: Scalar> BlockParams<T> {
    fn init(cfg: &HyenaModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, s, n, k) = (cfg.dim, cfg.streams(), cfg.order, cfg.short_kernel);
        let (p, f, hid) = (cfg.filter_pos_dim, cfg.filter_hidden, cfg.mlp_expansion * cfg.dim);
        let (lo, hi) = (cfg.decay_fastest.ln(), cfg.decay_slowest.ln());
        let mut log_decay = Array::zeros(&[n, d]);
        for o in 0..n {
            for c in 0..d {
                let frac = if d > 1 { c as f64 / (d - 1) as f64 } else { 0.0 };
                log_decay.data[o * d + c] = T::of(lo + (hi - lo) * frac);
            }
        }
        Self {
            norm1_gain: Array::filled(&[d], T::one()),
            norm1_bias: Array::zeros(&[d]),
            in_proj_w: Array::glorot(d, s * d, rng),
            in_proj_b: Array::zeros(&[s * d]),
            short_kernels: Array::uniform(&[s * d, k], 1.0 / (k as f64).sqrt(), rng),
            filter_w1: Array::uniform(&[p, f], 1.0 / p as f64, rng),
            filter_b1: Array::zeros(&[f]),
            filter_w2: Array::glorot(f, n * d, rng),
            filter_b2: Array::zeros(&[n * d]),
            log_decay,
            out_proj_w: Array::glorot(d, d, rng),
            out_proj_b: Array::zeros(&[d]),
            norm2_gain: Array::filled(&[d], T::one()),
            norm2_bias: Array::zeros(&[d]),
            mlp_w1: Array::glorot(d, hid, rng),
            mlp_b1: Array::zeros(&[hid]),
            mlp_w2: Array::glorot(hid, d, rng),
            mlp_b2: Array::zeros(&[d]),
        }
    }

    fn filter_net(&self) -> FilterNet<'_, T> {
        FilterNet {
            w1: &self.filter_w1,
            b1: &self.filter_b1,
            w2: &self.filter_w2,
            b2: &self.filter_b2,
            log_decay: &self.log_decay,
        }
    }

    fn fields(&self) -> [(&'static str, &Array<T>); 18] {
        [
            ("norm1.gain", &self.norm1_gain),
            ("norm1.bias", &self.norm1_bias),
            ("in_proj.weight", &self.in_proj_w),
            ("in_proj.bias", &self.in_proj_b),
            ("short_conv.kernels", &self.short_kernels),
            ("filter.w1", &self.filter_w1),
            ("filter.b1", &self.filter_b1),
            ("filter.w2", &self.filter_w2),
            ("filter.b2", &self.filter_b2),
            ("filter.log_decay", &self.log_decay),
            ("out_proj.weight", &self.out_proj_w),
            ("out_proj.bias", &self.out_proj_b),
            ("norm2.gain", &self.norm2_gain),
            ("norm2.bias", &self.norm2_bias),
            ("mlp.w1", &self.mlp_w1),
            ("mlp.b1", &self.mlp_b1),
            ("mlp.w2", &self.mlp_w2),
            ("mlp.b2", &self.mlp_b2),
        ]
    }

    fn fields_mut(&mut self) -> [(&'static str, &mut Array<T>); 18] {
        [
            ("norm1.gain", &mut self.norm1_gain),
            ("norm1.bias", &mut self.norm1_bias),
            ("in_proj.weight", &mut self.in_proj_w),
            ("in_proj.bias", &mut self.in_proj_b),
            ("short_conv.kernels", &mut self.short_kernels),
            ("filter.w1", &mut self.filter_w1),
            ("filter.b1", &mut self.filter_b1),
            ("filter.w2", &mut self.filter_w2),
            ("filter.b2", &mut self.filter_b2),
            ("filter.log_decay", &mut self.log_decay),
            ("out_proj.weight", &mut self.out_proj_w),
            ("out_proj.bias", &mut self.out_proj_b),
            ("norm2.gain", &mut self.norm2_gain),
            ("norm2.bias", &mut self.norm2_bias),
            ("mlp.w1", &mut self.mlp_w1),
            ("mlp.b1", &mut self.mlp_b1),
            ("mlp.w2", &mut self.mlp_w2),
            ("mlp.b2", &mut self.mlp_b2),
        ]
    }
}

/// All trainable student arrays. The vocabulary projection reuses
/// `token_embedding`; there is no separate output matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HyenaParams<T> {
    pub config: HyenaModelConfig,
    pub token_embedding: Array<T>,
    pub positional_embedding: Array<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub final_norm_gain: Array<T>,
    pub final_norm_bias: Array<T>,
}

impl<T: Scalar> Parameters<T> for HyenaParams<T> {
    fn named_arrays(&self) -> Vec<(String, &Array<T>)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("positional_embedding".to_string(), &self.positional_embedding),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.fields().into_iter().map(|(n, a)| (format!("blocks.{i}.{n}"), a)));
        }
        out.push(("final_norm.gain".to_string(), &self.final_norm_gain));
        out.push(("final_norm.bias".to_string(), &self.final_norm_bias));
        out
    }

    fn named_arrays_mut(&mut self) -> Vec<(String, &mut Array<T>)> {
        let mut out = vec![
            ("token_embedding".to_string(), &mut self.token_embedding),
            ("positional_embedding".to_string(), &mut self.positional_embedding),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.fields_mut().into_iter().map(|(n, a)| (format!("blocks.{i}.{n}"), a)));
        }
        out.push(("final_norm.gain".to_string(), &mut self.final_norm_gain));
        out.push(("final_norm.bias".to_string(), &mut self.final_norm_bias));
        out
    }
}

impl<T: Scalar> HyenaParams<T> {
    /// Deterministic initialization from `seed`.
    pub fn init(config: &HyenaModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d, l) = (config.vocab_size, config.dim, config.max_seq_len);
        let token_embedding = Array::normal(&[v, d], config.embed_init_std, &mut rng);
        let positional_embedding = Array::normal(&[l, d], 0.02, &mut rng);
        let blocks = (0..config.n_blocks).map(|_| BlockParams::init(config, &mut rng)).collect();
        Ok(Self {
            config: config.clone(),
            token_embedding,
            positional_embedding,
            blocks,
            final_norm_gain: Array::filled(&[d], T::one()),
            final_norm_bias: Array::zeros(&[d]),
        })
    }

    /// Zero-filled gradient container with identical layout.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero_grads();
        g
    }

    pub fn cast<U: Scalar>(&self) -> HyenaParams<U> {
        let cast_block = |b: &BlockParams<T>| BlockParams {
            norm1_gain: b.norm1_gain.cast(),
            norm1_bias: b.norm1_bias.cast(),
            in_proj_w: b.in_proj_w.cast(),
            in_proj_b: b.in_proj_b.cast(),
            short_kernels: b.short_kernels.cast(),
            filter_w1: b.filter_w1.cast(),
            filter_b1: b.filter_b1.cast(),
            filter_w2: b.filter_w2.cast(),
            filter_b2: b.filter_b2.cast(),
            log_decay: b.log_decay.cast(),
            out_proj_w: b.out_proj_w.cast(),
            out_proj_b: b.out_proj_b.cast(),
            norm2_gain: b.norm2_gain.cast(),
            norm2_bias: b.norm2_bias.cast(),
            mlp_w1: b.mlp_w1.cast(),
            mlp_b1: b.mlp_b1.cast(),
            mlp_w2: b.mlp_w2.cast(),
            mlp_b2: b.mlp_b2.cast(),
        };
        HyenaParams {
            config: self.config.clone(),
            token_embedding: self.token_embedding.cast(),
            positional_embedding: self.positional_embedding.cast(),
            blocks: self.blocks.iter().map(cast_block).collect(),
            final_norm_gain: self.final_norm_gain.cast(),
            final_norm_bias: self.final_norm_bias.cast(),
        }
    }
}

pub struct OperatorCache<T> {
    p: Vec<T>,
    /// `v, x^1 .. x^N`, each `(rows x D)`.
    streams: Vec<Vec<T>>,
    /// Long-convolution outputs, one per stage.
    convs: Vec<Vec<T>>,
    /// `z^1 .. z^{N+1}`.
    zs: Vec<Vec<T>>,
}

fn split_streams<T: Scalar>(q: &[T], rows: usize, d: usize, s: usize) -> Vec<Vec<T>> {
    (0..s)
        .map(|k| {
            let mut out = Vec::with_capacity(rows * d);
            for r in 0..rows {
                out.extend_from_slice(&q[r * s * d + k * d..r * s * d + (k + 1) * d]);
            }
            out
        })
        .collect()
}

fn merge_streams<T: Scalar>(streams: &[Vec<T>], rows: usize, d: usize) -> Vec<T> {
    let s = streams.len();
    let mut q = vec![T::zero(); rows * s * d];
    for (k, stream) in streams.iter().enumerate() {
        for r in 0..rows {
            q[r * s * d + k * d..r * s * d + (k + 1) * d].copy_from_slice(&stream[r * d..(r + 1) * d]);
        }
    }
    q
}

fn operator_forward<T: Scalar>(
    u: &[T],
    block: &BlockParams<T>,
    filters: &FilterBank<T>,
    batch: usize,
    len: usize,
) -> Result<(Vec<T>, OperatorCache<T>)> {
    let d = block.out_proj_w.shape[0];
    let s = block.in_proj_w.shape[1] / d;
    let k = block.short_kernels.shape[1];
    let rows = batch * len;
    if u.len() != rows * d || filters.len != len || filters.order + 1 != s {
        return Err(Error::Shape(format!(
            "hyena operator: input {} / filters ({} x {}) do not fit B={batch}, L={len}, D={d}",
            u.len(),
            filters.order,
            filters.len
        )));
    }
    let p = linear(u, rows, &block.in_proj_w, Some(&block.in_proj_b));
    let q = short_conv(&p, &block.short_kernels.data, batch, len, s * d, k)?;
    let streams = split_streams(&q, rows, d, s);
    let mut zs = vec![streams[0].clone()];
    let mut convs = Vec::with_capacity(s - 1);
    for i in 0..s - 1 {
        let c = fft_causal_conv(&zs[i], filters.stage(i), batch, len, d)?;
        let z: Vec<T> = streams[i + 1].iter().zip(&c).map(|(x, y)| *x * *y).collect();
        convs.push(c);
        zs.push(z);
    }
    let out = linear(&zs[s - 1], rows, &block.out_proj_w, Some(&block.out_proj_b));
    Ok((out, OperatorCache { p, streams, convs, zs }))
}

/// Returns `du` and the filter gradient `(order x len x D)`.
fn operator_backward<T: Scalar>(
    dout: &[T],
    u: &[T],
    cache: &OperatorCache<T>,
    block: &BlockParams<T>,
    grads: &mut BlockParams<T>,
    filters: &FilterBank<T>,
    batch: usize,
    len: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    let d = block.out_proj_w.shape[0];
    let s = cache.streams.len();
    let k = block.short_kernels.shape[1];
    let rows = batch * len;
    let mut dz = linear_backward(
        &cache.zs[s - 1],
        dout,
        rows,
        &block.out_proj_w,
        &mut grads.out_proj_w,
        Some(&mut grads.out_proj_b),
    );
    let mut dstreams: Vec<Vec<T>> = vec![Vec::new(); s];
    let mut dh = vec![T::zero(); filters.h.len()];
    for i in (0..s - 1).rev() {
        let x = &cache.streams[i + 1];
        let c = &cache.convs[i];
        dstreams[i + 1] = dz.iter().zip(c).map(|(g, v)| *g * *v).collect();
        let dc: Vec<T> = dz.iter().zip(x).map(|(g, v)| *g * *v).collect();
        let (dprev, dhi) = fft_causal_conv_backward(&dc, &cache.zs[i], filters.stage(i), batch, len, d)?;
        dh[i * len * d..(i + 1) * len * d].copy_from_slice(&dhi);
        dz = dprev;
    }
    dstreams[0] = dz;
    let dq = merge_streams(&dstreams, rows, d);
    let dp = short_conv_backward(
        &dq,
        &cache.p,
        &block.short_kernels.data,
        &mut grads.short_kernels.data,
        batch,
        len,
        s * d,
        k,
    )?;
    let du = linear_backward(u, &dp, rows, &block.in_proj_w, &mut grads.in_proj_w, Some(&mut grads.in_proj_b));
    Ok((du, dh))
}

/// The order-N Hyena operator on `(batch x len x D)` input with precomputed filters.
pub fn hyena_operator<T: Scalar>(
    u: &[T],
    block: &BlockParams<T>,
    filters: &FilterBank<T>,
    batch: usize,
    len: usize,
) -> Result<Vec<T>> {
    operator_forward(u, block, filters, batch, len).map(|(y, _)| y)
}

struct BlockCache<T> {
    ln1: NormCache<T>,
    a: Vec<T>,
    op: OperatorCache<T>,
    ln2: NormCache<T>,
    c: Vec<T>,
    hid: Vec<T>,
    act: Vec<T>,
    filters: FilterBank<T>,
    filter_cache: FilterCache<T>,
}

/// Full-length filters for a block, truncated to the current window.
fn block_filters<T: Scalar>(
    block: &BlockParams<T>,
    cfg: &HyenaModelConfig,
    len: usize,
) -> (FilterBank<T>, FilterCache<T>) {
    let (bank, cache) = generate_filters(&block.filter_net(), cfg.max_seq_len, cfg.filter_pos_dim);
    (bank.truncated(len), cache)
}

fn block_forward<T: Scalar>(
    e: &mut [T],
    block: &BlockParams<T>,
    cfg: &HyenaModelConfig,
    batch: usize,
    len: usize,
) -> Result<BlockCache<T>> {
    let rows = batch * len;
    let (filters, filter_cache) = block_filters(block, cfg, len);
    let (a, ln1) = layer_norm(e, &block.norm1_gain, &block.norm1_bias);
    let (o, op) = operator_forward(&a, block, &filters, batch, len)?;
    e.iter_mut().zip(&o).for_each(|(x, y)| *x += *y);
    let (c, ln2) = layer_norm(e, &block.norm2_gain, &block.norm2_bias);
    let hid = linear(&c, rows, &block.mlp_w1, Some(&block.mlp_b1));
    let act: Vec<T> = hid.iter().map(|&x| gelu(x)).collect();
    let m = linear(&act, rows, &block.mlp_w2, Some(&block.mlp_b2));
    e.iter_mut().zip(&m).for_each(|(x, y)| *x += *y);
    Ok(BlockCache {
        ln1,
        a,
        op,
        ln2,
        c,
        hid,
        act,
        filters,
        filter_cache,
    })
}

/// Backpropagates through one block; `de` holds the gradient w.r.t. the
/// block output on entry and w.r.t. its input on exit.
fn block_backward<T: Scalar>(
    de: &mut [T],
    cache: &BlockCache<T>,
    block: &BlockParams<T>,
    grads: &mut BlockParams<T>,
    cfg: &HyenaModelConfig,
    batch: usize,
    len: usize,
) -> Result<()> {
    let rows = batch * len;
    let dact = linear_backward(&cache.act, de, rows, &block.mlp_w2, &mut grads.mlp_w2, Some(&mut grads.mlp_b2));
    let dhid: Vec<T> = dact.iter().zip(&cache.hid).map(|(g, &x)| *g * gelu_grad(x)).collect();
    let dc = linear_backward(&cache.c, &dhid, rows, &block.mlp_w1, &mut grads.mlp_w1, Some(&mut grads.mlp_b1));
    let dres = layer_norm_backward(&dc, &cache.ln2, &block.norm2_gain, &mut grads.norm2_gain, &mut grads.norm2_bias);
    de.iter_mut().zip(&dres).for_each(|(x, y)| *x += *y);

    let (da, dh) = operator_backward(de, &cache.a, &cache.op, block, grads, &cache.filters, batch, len)?;
    let dres = layer_norm_backward(&da, &cache.ln1, &block.norm1_gain, &mut grads.norm1_gain, &mut grads.norm1_bias);
    de.iter_mut().zip(&dres).for_each(|(x, y)| *x += *y);

    // scatter the truncated filter gradient back into the full-length bank
    let (n, lmax, d) = (cfg.order, cfg.max_seq_len, cfg.dim);
    let mut dh_full = vec![T::zero(); n * lmax * d];
    for i in 0..n {
        dh_full[i * lmax * d..i * lmax * d + len * d].copy_from_slice(&dh[i * len * d..(i + 1) * len * d]);
    }
    let fgrads = FilterNetGrads {
        w1: &mut grads.filter_w1,
        b1: &mut grads.filter_b1,
        w2: &mut grads.filter_w2,
        b2: &mut grads.filter_b2,
        log_decay: &mut grads.log_decay,
    };
    generate_filters_backward(&block.filter_net(), &cache.filter_cache, &dh_full, fgrads);
    Ok(())
}

/// Activations retained by [`forward_train`] for [`backward`].
pub struct ForwardCache<T> {
    batch: usize,
    len: usize,
    tokens: Vec<usize>,
    blocks: Vec<BlockCache<T>>,
    final_norm: NormCache<T>,
    features: Vec<T>,
}

fn check_tokens(tokens: &[usize], batch: usize, len: usize, cfg: &HyenaModelConfig) -> Result<()> {
    if tokens.len() != batch * len {
        return Err(Error::Shape(format!("{} tokens for a {batch} x {len} batch", tokens.len())));
    }
    if len > cfg.max_seq_len {
        return Err(Error::Shape(format!("sequence length {len} exceeds max_seq_len {}", cfg.max_seq_len)));
    }
    if let Some(&id) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Vocab {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

fn embed<T: Scalar>(params: &HyenaParams<T>, tokens: &[usize], len: usize) -> Vec<T> {
    let d = params.config.dim;
    let mut e = vec![T::zero(); tokens.len() * d];
    for (r, &tok) in tokens.iter().enumerate() {
        let t = r % len;
        let te = &params.token_embedding.data[tok * d..(tok + 1) * d];
        let pe = &params.positional_embedding.data[t * d..(t + 1) * d];
        for j in 0..d {
            e[r * d + j] = te[j] + pe[j];
        }
    }
    e
}

fn project_vocab<T: Scalar>(params: &HyenaParams<T>, features: &[T], rows: usize) -> Vec<T> {
    let (v, d) = (params.config.vocab_size, params.config.dim);
    let mut logits = vec![T::zero(); rows * v];
    T::gemm(rows, d, v, T::one(), features, false, &params.token_embedding.data, true, T::zero(), &mut logits);
    logits
}

/// Logits `(batch * len x V)` for row-major `(batch x len)` tokens.
pub fn forward<T: Scalar>(params: &HyenaParams<T>, tokens: &[usize], batch: usize, len: usize) -> Result<Vec<T>> {
    let cfg = &params.config;
    check_tokens(tokens, batch, len, cfg)?;
    let mut e = embed(params, tokens, len);
    for block in &params.blocks {
        block_forward(&mut e, block, cfg, batch, len)?;
    }
    let (f, _) = layer_norm(&e, &params.final_norm_gain, &params.final_norm_bias);
    Ok(project_vocab(params, &f, batch * len))
}

/// Like [`forward`], keeping what [`backward`] needs.
pub fn forward_train<T: Scalar>(
    params: &HyenaParams<T>,
    tokens: &[usize],
    batch: usize,
    len: usize,
) -> Result<(Vec<T>, ForwardCache<T>)> {
    let cfg = &params.config;
    check_tokens(tokens, batch, len, cfg)?;
    let mut e = embed(params, tokens, len);
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        blocks.push(block_forward(&mut e, block, cfg, batch, len)?);
    }
    let (f, final_norm) = layer_norm(&e, &params.final_norm_gain, &params.final_norm_bias);
    let logits = project_vocab(params, &f, batch * len);
    let cache = ForwardCache {
        batch,
        len,
        tokens: tokens.to_vec(),
        blocks,
        final_norm,
        features: f,
    };
    Ok((logits, cache))
}

/// Exact gradients of a scalar objective given `dlogits`.
pub fn backward<T: Scalar>(params: &HyenaParams<T>, cache: ForwardCache<T>, dlogits: &[T]) -> Result<HyenaParams<T>> {
    let cfg = &params.config;
    let (batch, len) = (cache.batch, cache.len);
    let rows = batch * len;
    let (v, d) = (cfg.vocab_size, cfg.dim);
    let mut grads = params.zeros_like();

    // tied projection: output-side gradient lands in the embedding table
    T::gemm(v, rows, d, T::one(), dlogits, true, &cache.features, false, T::one(), &mut grads.token_embedding.data);
    let mut df = vec![T::zero(); rows * d];
    T::gemm(rows, v, d, T::one(), dlogits, false, &params.token_embedding.data, false, T::zero(), &mut df);
    let mut de = layer_norm_backward(
        &df,
        &cache.final_norm,
        &params.final_norm_gain,
        &mut grads.final_norm_gain,
        &mut grads.final_norm_bias,
    );
    for (i, bc) in cache.blocks.iter().enumerate().rev() {
        block_backward(&mut de, bc, &params.blocks[i], &mut grads.blocks[i], cfg, batch, len)?;
    }
    for (r, &tok) in cache.tokens.iter().enumerate() {
        let t = r % len;
        for j in 0..d {
            grads.token_embedding.data[tok * d + j] += de[r * d + j];
            grads.positional_embedding.data[t * d + j] += de[r * d + j];
        }
    }
    Ok(grads)
}

pub struct StudentStep<T> {
    /// `ce + reg_weight * beta * l2`.
    pub loss: f64,
    pub ce: f64,
    pub l2: f64,
    pub grads: HyenaParams<T>,
}

/// Gradient of the logit-level loss, given logits from [`forward_train`].
///
/// `logits` is consumed and reused as the `dlogits` buffer.
pub fn loss_and_backward<T: Scalar>(
    params: &HyenaParams<T>,
    cache: ForwardCache<T>,
    mut logits: Vec<T>,
    targets: &[usize],
    reg_weight: f64,
    beta: f64,
) -> Result<StudentStep<T>> {
    let v = params.config.vocab_size;
    if targets.len() * v != logits.len() {
        return Err(Error::Shape(format!("{} targets for {} logits", targets.len(), logits.len())));
    }
    if let Some(&id) = targets.iter().find(|&&t| t >= v) {
        return Err(Error::Vocab { id, vocab_size: v });
    }
    let scale = reg_weight * beta;
    let (ce, l2) = loss::loss_and_grad_in_place(&mut logits, targets, v, scale);
    let loss = if scale == 0.0 { ce } else { ce + scale * l2 };
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite student loss (ce={ce}, l2={l2})")));
    }
    let grads = backward(params, cache, &logits)?;
    Ok(StudentStep { loss, ce, l2, grads })
}

/// `loss = ce + reg_weight * beta * l2` and its exact parameter gradients.
pub fn student_loss_and_grads<T: Scalar>(
    params: &HyenaParams<T>,
    tokens: &[usize],
    targets: &[usize],
    batch: usize,
    len: usize,
    reg_weight: f64,
    beta: f64,
) -> Result<StudentStep<T>> {
    let (logits, cache) = forward_train(params, tokens, batch, len)?;
    loss_and_backward(params, cache, logits, targets, reg_weight, beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> HyenaModelConfig {
        HyenaModelConfig {
            vocab_size: 10,
            dim: 4,
            n_blocks: 1,
            order: 2,
            short_kernel: 3,
            max_seq_len: 8,
            filter_pos_dim: 5,
            filter_hidden: 8,
            mlp_expansion: 2,
            ..HyenaModelConfig::default()
        }
    }

    #[test]
    fn tiny_param_count_matches_hand_count() {
        // emb 40, pos 32, norm1 8, in_proj 48+12, short 36, filter 40+8+64+8,
        // decay 8, out_proj 16+4, norm2 8, mlp 32+8+32+4, final norm 8
        let p = HyenaParams::<f64>::init(&tiny(), 7).unwrap();
        assert_eq!(p.param_count(), 416);
        assert_eq!(tiny().param_count(), 416);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = HyenaParams::<f32>::init(&tiny(), 7).unwrap();
        let b = HyenaParams::<f32>::init(&tiny(), 7).unwrap();
        let c = HyenaParams::<f32>::init(&tiny(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn decay_rates_are_log_spaced_and_positive() {
        let p = HyenaParams::<f64>::init(&HyenaModelConfig { dim: 5, ..tiny() }, 1).unwrap();
        let alpha: Vec<f64> = p.blocks[0].log_decay.data[..5].iter().map(|x| x.exp()).collect();
        assert!((alpha[0] - 0.3).abs() < 1e-12);
        assert!((alpha[4] - 30.0).abs() < 1e-9);
        assert!((alpha[2] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn single_token_forward_shape() {
        let p = HyenaParams::<f32>::init(&tiny(), 3).unwrap();
        let logits = forward(&p, &[4], 1, 1).unwrap();
        assert_eq!(logits.len(), 10);
        assert!(logits.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn out_of_range_token_is_vocab_error() {
        let p = HyenaParams::<f32>::init(&tiny(), 3).unwrap();
        assert!(matches!(forward(&p, &[10], 1, 1), Err(Error::Vocab { id: 10, .. })));
    }

    #[test]
    fn batch_rows_do_not_mix() {
        let p = HyenaParams::<f32>::init(&tiny(), 3).unwrap();
        let tokens = [1, 2, 3, 4, 1, 2, 3, 4];
        let logits = forward(&p, &tokens, 2, 4).unwrap();
        assert_eq!(logits[..40], logits[40..]);
    }

    #[test]
    fn zero_reg_is_plain_cross_entropy() {
        let p = HyenaParams::<f64>::init(&tiny(), 3).unwrap();
        let tokens = [1, 2, 3, 4, 5, 6];
        let targets = [2, 3, 4, 5, 6, 7];
        let s = student_loss_and_grads(&p, &tokens, &targets, 2, 3, 0.0, 0.01).unwrap();
        assert_eq!(s.loss, s.ce);
        let logits = forward(&p, &tokens, 2, 3).unwrap();
        assert_eq!(s.ce, cross_entropy(&logits, &targets, 10));
    }

    #[test]
    fn doubling_beta_doubles_regularizer() {
        let p = HyenaParams::<f64>::init(&tiny(), 3).unwrap();
        let tokens = [1, 2, 3, 4, 5, 6];
        let targets = [2, 3, 4, 5, 6, 7];
        let a = student_loss_and_grads(&p, &tokens, &targets, 2, 3, 0.4, 0.01).unwrap();
        let b = student_loss_and_grads(&p, &tokens, &targets, 2, 3, 0.4, 0.02).unwrap();
        assert!(((b.loss - b.ce) - 2.0 * (a.loss - a.ce)).abs() < 1e-15);
    }
}
