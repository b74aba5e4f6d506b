use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest probability fed to the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Sparse categorical cross-entropy on softmax outputs `[N, K]`.
///
/// Returns `−(1/N) Σ log max(p[i, yᵢ], 1e-12)` and the gradient with respect
/// to the pre-softmax logits, `(p − onehot(y)) / N`.
pub fn sparse_ce(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if probs.rank() != 2 || probs.shape()[0] != labels.len() {
        return Err(Error::shape(
            "sparse_ce",
            format!("probabilities {:?} vs {} labels", probs.shape(), labels.len()),
        ));
    }
    let (n, k) = (labels.len(), probs.shape()[1]);
    let mut grad = probs.data().to_vec();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange {
                index: i,
                label: y,
                classes: k,
            });
        }
        total -= probs.data()[i * k + y].max(PROB_FLOOR).ln();
        grad[i * k + y] -= 1.0;
    }
    let scale = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((total * scale, Tensor::from_vec(probs.shape(), grad)?))
}

/// Fraction of rows whose first maximal entry equals the label.
pub fn accuracy(probs: &Tensor, labels: &[usize]) -> f64 {
    let hits = probs.argmax_rows().iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len().max(1) as f64
}
