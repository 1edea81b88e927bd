use crate::element::Element;
use crate::error::{shape_err, Result, TensorError};
use crate::ops::{add_scalar, exp, log, max_last_axis_detached, mean_all, mul, neg, scale, sub, sum_all, sum_axes};
use crate::tensor::Tensor;

/// Log-softmax over the last axis, stabilized by subtracting the (constant) row max.
pub fn log_softmax<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let last = x
        .ndim()
        .checked_sub(1)
        .ok_or_else(|| shape_err("log_softmax", "rank-0 input"))?;
    let m = max_last_axis_detached(x)?;
    let shifted = sub(x, &m)?;
    let lse = log(&sum_axes(&exp(&shifted), &[last], true)?);
    sub(&shifted, &lse)
}

/// Softmax over the last axis as a constant.
pub fn softmax_detached<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let k = *x.shape().last().ok_or_else(|| shape_err("softmax", "rank-0 input"))?;
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    Tensor::from_vec(x.shape(), out)
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (n, k) = match logits.shape() {
        &[n, k] => (n, k),
        s => {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("expected N×K logits, got {s:?}"),
            ))
        }
    };
    if labels.len() != n {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    let mut onehot = vec![T::zero(); n * k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(TensorError::LabelOutOfRange { label: l, classes: k });
        }
        onehot[i * k + l] = T::one();
    }
    let onehot = Tensor::from_vec(&[n, k], onehot)?;
    let picked = sum_all(&mul(&log_softmax(logits)?, &onehot)?);
    Ok(scale(&neg(&picked), T::of(1.0 / n.max(1) as f64)))
}

/// Mean over rows of `-Σ target · log softmax(logits)`; `target` is a constant
/// distribution per row.
pub fn soft_cross_entropy<T: Element>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.shape() != target.shape() {
        return Err(shape_err(
            "soft_cross_entropy",
            format!("logits {:?} vs target {:?}", logits.shape(), target.shape()),
        ));
    }
    let rows = logits.numel() / logits.shape().last().copied().unwrap_or(1).max(1);
    let total = sum_all(&mul(&log_softmax(logits)?, &target.detach())?);
    Ok(scale(&neg(&total), T::of(1.0 / rows.max(1) as f64)))
}

/// Mean squared value, a common building block for distances.
pub fn mean_square<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    mean_all(&crate::ops::square(x))
}

/// `1 - cos(a, b)` over flattened vectors; returns exactly 1 when either side
/// is the zero vector.
pub fn cosine_distance<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.numel() != b.numel() {
        return Err(shape_err(
            "cosine_distance",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let a_zero = a.data().iter().all(|v| *v == T::zero());
    let b_zero = b.data().iter().all(|v| *v == T::zero());
    if a_zero || b_zero {
        // constant 1, still attached so callers can sum it with other terms
        let anchor = scale(&sum_all(a), T::zero());
        return Ok(add_scalar(&anchor, T::one()));
    }
    let b = crate::ops::reshape(b, a.shape())?;
    let dot = sum_all(&mul(a, &b)?);
    let na = crate::ops::sqrt(&sum_all(&crate::ops::square(a)));
    let nb = crate::ops::sqrt(&sum_all(&crate::ops::square(&b)));
    let cos = crate::ops::div(&dot, &mul(&na, &nb)?)?;
    Ok(add_scalar(&neg(&cos), T::one()))
}
