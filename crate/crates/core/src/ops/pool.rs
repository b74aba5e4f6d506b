//! 2×2 / stride-2 max pooling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims(input: &Tensor) -> Result<(usize, usize, usize)> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::shape(
            "maxpool2",
            format!("input must be [N, C, H, W], got {s:?}"),
        ));
    }
    if s[2] % 2 != 0 || s[3] % 2 != 0 {
        return Err(Error::OddSpatial {
            height: s[2],
            width: s[3],
        });
    }
    Ok((s[0] * s[1], s[2], s[3]))
}

/// Flat input offset of the winning element of each window. Ties go to the
/// first element in row-major order (top-left, top-right, bottom-left,
/// bottom-right).
pub fn maxpool2_argmax(input: &Tensor) -> Result<Vec<usize>> {
    let (planes, h, w) = dims(input)?;
    let x = input.data();
    let mut idx = Vec::with_capacity(planes * h * w / 4);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                idx.push(best);
            }
        }
    }
    Ok(idx)
}

pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    let idx = maxpool2_argmax(input)?;
    let x = input.data();
    Tensor::from_vec(
        &[s[0], s[1], s[2] / 2, s[3] / 2],
        idx.into_iter().map(|i| x[i]).collect(),
    )
}

/// Routes each upstream gradient to its window's argmax.
pub fn maxpool2_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let idx = maxpool2_argmax(input)?;
    if grad_out.len() != idx.len() {
        return Err(Error::shape(
            "maxpool2_backward",
            format!("grad_out {:?} vs input {:?}", grad_out.shape(), input.shape()),
        ));
    }
    let mut gx = Tensor::zeros(input.shape());
    let d = gx.data_mut();
    for (&i, &g) in idx.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2(&x).unwrap().data(), &[4.0]);
        let g = maxpool2_backward(&x, &Tensor::filled(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_go_top_left() {
        let x = Tensor::filled(&[1, 2, 4, 4], 0.5);
        let y = maxpool2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.5));
        let g = maxpool2_backward(&x, &Tensor::filled(y.shape(), 1.0)).unwrap();
        for plane in g.data().chunks(16) {
            for (i, &v) in plane.iter().enumerate() {
                let (r, c) = (i / 4, i % 4);
                let expect = if r % 2 == 0 && c % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(v, expect);
            }
        }
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::zeros(&[1, 1, 3, 4]);
        assert!(matches!(maxpool2(&x), Err(Error::OddSpatial { height: 3, width: 4 })));
    }
}
