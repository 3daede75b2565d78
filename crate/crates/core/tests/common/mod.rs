//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use l2t_hyena::{Parameters, Scalar};

/// Direct O(L^2) causal convolution, `(batch x len x ch)` signal, `(len x ch)` filter.
pub fn direct_causal_conv(u: &[f64], h: &[f64], batch: usize, len: usize, ch: usize) -> Vec<f64> {
    let mut y = vec![0.0; u.len()];
    for b in 0..batch {
        for t in 0..len {
            for d in 0..ch {
                let mut acc = 0.0;
                for s in 0..=t {
                    acc += h[s * ch + d] * u[(b * len + t - s) * ch + d];
                }
                y[(b * len + t) * ch + d] = acc;
            }
        }
    }
    y
}

/// Norm-relative error `max|a - b| / max|b|` (absolute when `b` vanishes).
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub struct GradMismatch {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares every analytic gradient entry against central differences of
/// `objective`, with tolerance `max(abs_tol, rel_tol * |numeric|)`.
pub fn check_all_gradients<P, F>(
    params: &P,
    grads: &P,
    mut objective: F,
    eps: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Vec<GradMismatch>
where
    P: Parameters<f64> + Clone,
    F: FnMut(&P) -> f64,
{
    let mut bad = Vec::new();
    let names: Vec<(String, usize)> = params.named_arrays().iter().map(|(n, a)| (n.clone(), a.len())).collect();
    let analytic: Vec<Vec<f64>> = grads.named_arrays().iter().map(|(_, a)| a.data.clone()).collect();
    let mut probe = params.clone();
    for (k, (name, n)) in names.iter().enumerate() {
        for i in 0..*n {
            let orig = probe.named_arrays()[k].1.data[i];
            set(&mut probe, k, i, orig + eps);
            let plus = objective(&probe);
            set(&mut probe, k, i, orig - eps);
            let minus = objective(&probe);
            set(&mut probe, k, i, orig);
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[k][i];
            if (a - numeric).abs() > abs_tol.max(rel_tol * numeric.abs()) {
                bad.push(GradMismatch {
                    name: name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    bad
}

fn set<P: Parameters<f64>>(p: &mut P, k: usize, i: usize, v: f64) {
    let mut arrays = p.named_arrays_mut();
    arrays[k].1.data[i] = v;
}

pub fn report(bad: &[GradMismatch]) -> String {
    bad.iter()
        .take(10)
        .map(|m| format!("{}[{}]: analytic {:.6e} numeric {:.6e}", m.name, m.index, m.analytic, m.numeric))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn as_f64<T: Scalar>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.f64()).collect()
}
