//! Fully connected layer: `y = x·W + b`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn check(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    if input.rank() != 2 || weights.rank() != 2 {
        return Err(Error::shape(
            "dense",
            format!("expected [N, F] and [F, U], got {:?} and {:?}", input.shape(), weights.shape()),
        ));
    }
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let (wf, u) = (weights.shape()[0], weights.shape()[1]);
    if f != wf {
        return Err(Error::shape(
            "dense",
            format!("input features {f} vs weight rows {wf}"),
        ));
    }
    if bias.shape() != [u] {
        return Err(Error::shape(
            "dense",
            format!("bias {:?} vs units {u}", bias.shape()),
        ));
    }
    Ok((n, f, u))
}

pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f, u) = check(input, weights, bias)?;
    let w = weights.data();
    let mut out = vec![0.0; n * u];
    out.par_chunks_mut(u)
        .zip(input.data().par_chunks(f))
        .for_each(|(y, x)| {
            for (i, &xv) in x.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (yv, &wv) in y.iter_mut().zip(&w[i * u..(i + 1) * u]) {
                    *yv += xv * wv;
                }
            }
            for (yv, &bv) in y.iter_mut().zip(bias.data()) {
                *yv += bv;
            }
        });
    Tensor::from_vec(&[n, u], out)
}

pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<DenseGrads> {
    let (n, f, u) = check(input, weights, bias)?;
    if grad_out.shape() != [n, u] {
        return Err(Error::shape(
            "dense_backward",
            format!("grad_out {:?} vs output [{n}, {u}]", grad_out.shape()),
        ));
    }
    let x = input.data();
    let w = weights.data();
    let gy = grad_out.data();

    let mut gx = vec![0.0; n * f];
    gx.par_chunks_mut(f).enumerate().for_each(|(row, gxr)| {
        let g = &gy[row * u..(row + 1) * u];
        for (i, d) in gxr.iter_mut().enumerate() {
            *d = g.iter().zip(&w[i * u..(i + 1) * u]).map(|(a, b)| a * b).sum();
        }
    });

    let mut gw = vec![0.0; f * u];
    gw.par_chunks_mut(u).enumerate().for_each(|(i, gwr)| {
        for row in 0..n {
            let xv = x[row * f + i];
            if xv == 0.0 {
                continue;
            }
            for (d, &gv) in gwr.iter_mut().zip(&gy[row * u..(row + 1) * u]) {
                *d += xv * gv;
            }
        }
    });

    let mut gb = vec![0.0; u];
    for g in gy.chunks(u) {
        for (d, &gv) in gb.iter_mut().zip(g) {
            *d += gv;
        }
    }

    Ok(DenseGrads {
        input: Tensor::from_vec(&[n, f], gx)?,
        weights: Tensor::from_vec(&[f, u], gw)?,
        bias: Tensor::from_vec(&[u], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let x = Tensor::from_vec(&[2, 2], vec![0.3, -1.0, 2.0, 5.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = dense(&x, &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn hand_arithmetic() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![10.0, 20.0]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[11.0, 22.0]);
    }

    #[test]
    fn mismatch_rejected() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 2]);
        assert!(dense(&x, &w, &Tensor::zeros(&[2])).is_err());
    }
}
