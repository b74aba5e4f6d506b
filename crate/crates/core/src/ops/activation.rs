//! ReLU and row-wise softmax.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Subgradient 0 at 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", input.shape(), grad_out.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Softmax over the last axis of a `[N, K]` tensor, max-shifted.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::shape(
            "softmax",
            format!("expected [N, K], got {:?}", logits.shape()),
        ));
    }
    if !logits.is_finite() {
        return Err(Error::shape("softmax", "non-finite logits"));
    }
    let k = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::from_vec(logits.shape(), out)
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − Σ p·g)` per row.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if probs.shape() != grad_out.shape() || probs.rank() != 2 {
        return Err(Error::shape(
            "softmax_backward",
            format!("{:?} vs {:?}", probs.shape(), grad_out.shape()),
        ));
    }
    let k = probs.shape()[1];
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks(k).zip(grad_out.data().chunks(k)) {
        let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(p.iter().zip(g).map(|(&pi, &gi)| pi * (gi - inner)));
    }
    Tensor::from_vec(probs.shape(), out)
}
