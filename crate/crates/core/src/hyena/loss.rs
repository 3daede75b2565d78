//! Student loss terms: token cross-entropy and the mean-squared-logit penalty.

use crate::tensor::Scalar;

/// Log-sum-exp of one row with max subtraction, accumulated in `f64`.
fn row_lse<T: Scalar>(row: &[T]) -> (f64, f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.f64()));
    let sum: f64 = row.iter().map(|&v| (v.f64() - max).exp()).sum();
    (max, max + sum.ln())
}

/// Mean over rows of `-log softmax(row)[target]`.
pub fn cross_entropy<T: Scalar>(logits: &[T], targets: &[usize], vocab: usize) -> f64 {
    assert_eq!(logits.len(), targets.len() * vocab, "logits/targets shape mismatch");
    let total: f64 = logits
        .chunks_exact(vocab)
        .zip(targets)
        .map(|(row, &y)| row_lse(row).1 - row[y].f64())
        .sum();
    total / targets.len() as f64
}

/// Mean over every entry of `logits^2`.
pub fn logit_l2<T: Scalar>(logits: &[T]) -> f64 {
    if logits.is_empty() {
        return 0.0;
    }
    logits.iter().map(|&v| v.f64() * v.f64()).sum::<f64>() / logits.len() as f64
}

/// Computes `(ce, l2)` and overwrites `logits` with
/// `d(ce + reg_scale * l2) / d logits`.
pub fn loss_and_grad_in_place<T: Scalar>(
    logits: &mut [T],
    targets: &[usize],
    vocab: usize,
    reg_scale: f64,
) -> (f64, f64) {
    assert_eq!(logits.len(), targets.len() * vocab, "logits/targets shape mismatch");
    let rows = targets.len() as f64;
    let l2 = logit_l2(logits);
    let l2_coef = 2.0 * reg_scale / logits.len() as f64;
    let mut ce = 0.0;
    for (row, &y) in logits.chunks_exact_mut(vocab).zip(targets) {
        let (_, lse) = row_lse(row);
        ce += lse - row[y].f64();
        for (j, v) in row.iter_mut().enumerate() {
            let z = v.f64();
            let p = (z - lse).exp();
            let onehot = if j == y { 1.0 } else { 0.0 };
            *v = T::of((p - onehot) / rows + l2_coef * z);
        }
    }
    (ce / rows, l2)
}
