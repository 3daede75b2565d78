//! Scalar abstraction, dense arrays and the matrix-multiply kernel.
//!
//! Everything numeric in the crate is generic over [`Scalar`] so the same
//! code trains in `f32` and runs gradient checks in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + rustfft::FftNum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` on row-major storage.
    ///
    /// `op(a)` is `m x k`, `op(b)` is `k x n`, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every scalar")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

/// Row/column strides of an `rows x cols` operand, stored transposed when `trans`.
fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: lhs too short");
                assert!(b.len() >= k * n, "gemm: rhs too short");
                assert!(c.len() >= m * n, "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                // SAFETY: bounds asserted above; strides describe dense row-major storage.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense row-major array with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Array<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data length mismatch");
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Normal samples via Box-Muller so the stream depends only on `rng`.
    pub fn normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen::<f64>();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            data.push(T::of(std * r * theta.cos()));
            if data.len() < n {
                data.push(T::of(std * r * theta.sin()));
            }
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Xavier-style uniform init with bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::uniform(&[fan_in, fan_out], bound, rng)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x.f64() * x.f64()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.f64())).collect(),
        }
    }
}

/// A named collection of parameter arrays in a fixed canonical order.
///
/// Optimizers, gradient clipping, checkpoints and gradient checks all walk
/// parameters through this trait, so the order returned must be identical
/// between the immutable and mutable views.
pub trait Parameters<T: Scalar> {
    fn named_arrays(&self) -> Vec<(String, &Array<T>)>;
    fn named_arrays_mut(&mut self) -> Vec<(String, &mut Array<T>)>;

    fn param_count(&self) -> usize {
        self.named_arrays().iter().map(|(_, a)| a.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.named_arrays().iter().all(|(_, a)| a.is_finite())
    }

    /// Order-sensitive FNV-1a hash over the bit patterns of every array.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, a) in self.named_arrays() {
            for x in &a.data {
                for byte in x.f64().to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    fn zero_grads(&mut self) {
        for (_, a) in self.named_arrays_mut() {
            a.fill(T::zero());
        }
    }
}

/// Adds `bias` (length `cols`) to each row of `out`.
pub fn add_row_bias<T: Scalar>(out: &mut [T], bias: &[T]) {
    let cols = bias.len();
    for row in out.chunks_exact_mut(cols) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// Accumulates the column sums of `x` (rows x cols) into `acc`.
pub fn accumulate_col_sums<T: Scalar>(x: &[T], acc: &mut [T]) {
    let cols = acc.len();
    for row in x.chunks_exact(cols) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

/// `y = x W + b` for `x` of shape (rows x d_in) and `W` of shape (d_in x d_out).
pub fn linear<T: Scalar>(x: &[T], rows: usize, w: &Array<T>, b: Option<&Array<T>>) -> Vec<T> {
    let (d_in, d_out) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(x.len(), rows * d_in);
    let mut y = vec![T::zero(); rows * d_out];
    T::gemm(rows, d_in, d_out, T::one(), x, false, &w.data, false, T::zero(), &mut y);
    if let Some(b) = b {
        add_row_bias(&mut y, &b.data);
    }
    y
}

/// Backward of [`linear`]: accumulates into `dw`/`db` and returns `dx`.
pub fn linear_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    rows: usize,
    w: &Array<T>,
    dw: &mut Array<T>,
    db: Option<&mut Array<T>>,
) -> Vec<T> {
    let (d_in, d_out) = (w.shape[0], w.shape[1]);
    T::gemm(d_in, rows, d_out, T::one(), x, true, dy, false, T::one(), &mut dw.data);
    if let Some(db) = db {
        accumulate_col_sums(dy, &mut db.data);
    }
    let mut dx = vec![T::zero(); rows * d_in];
    T::gemm(rows, d_out, d_in, T::one(), dy, false, &w.data, true, T::zero(), &mut dx);
    dx
}
