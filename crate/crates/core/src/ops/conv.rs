//! 2-D cross-correlation with zero padding.
//!
//! Every output element is accumulated as `0 + Σ w·x` over `(c, ky, kx)` in
//! ascending order, skipping padded taps, and the bias is added last. The
//! naive reference and the vectorised path share that order, so they agree
//! bit for bit. (The 3×3 fast path reads a zero-padded copy of the input;
//! adding `w·0` to an accumulator that starts at +0 never changes it, so
//! that is equivalent to skipping the tap.)

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    /// `[out_channels, in_channels, kernel_h, kernel_w]`
    pub weights: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    /// `None` when the caller did not ask for it (first layer).
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
}

/// floor((in + 2·pad − k) / stride) + 1, or `None` when the kernel does not fit.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        if weights.rank() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("weights must be rank 4, got {:?}", weights.shape()),
            ));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "bias shape {:?} does not match out_channels {}",
                    bias.shape(),
                    weights.shape()[0]
                ),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        Ok(Self {
            stride,
            padding,
            weights,
            bias,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel_h(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn kernel_w(&self) -> usize {
        self.weights.shape()[3]
    }

    fn geometry(&self, input: &Tensor) -> Result<Geometry> {
        let s = input.shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input must be [N, C, H, W], got {s:?}"),
            ));
        }
        if s[1] != self.in_channels() {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input channels: input has {}, kernel expects {}",
                    s[1],
                    self.in_channels()
                ),
            ));
        }
        let out_h = conv_output_size(s[2], self.kernel_h(), self.stride, self.padding)
            .ok_or_else(|| {
                Error::shape(
                    "conv2d",
                    format!("height: kernel {} does not fit input {}", self.kernel_h(), s[2]),
                )
            })?;
        let out_w = conv_output_size(s[3], self.kernel_w(), self.stride, self.padding)
            .ok_or_else(|| {
                Error::shape(
                    "conv2d",
                    format!("width: kernel {} does not fit input {}", self.kernel_w(), s[3]),
                )
            })?;
        Ok(Geometry {
            batch: s[0],
            in_ch: s[1],
            in_h: s[2],
            in_w: s[3],
            out_ch: self.out_channels(),
            kh: self.kernel_h(),
            kw: self.kernel_w(),
            out_h,
            out_w,
            stride: self.stride,
            pad: self.padding,
        })
    }
}

/// Output positions `[lo, hi)` along one axis whose tap `k` lands inside the input.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    if input + pad <= k {
        return (0, 0);
    }
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = ((input - 1 + pad - k) / stride + 1).min(output);
    (lo, hi.max(lo))
}

/// Four-lane dot product; fixed association so results are reproducible.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for i in 0..chunks {
        let j = 4 * i;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..n {
        tail += a[j] * b[j];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}


/// Copies `planes` planes of `h×w` into a zero border of width `pad`.
fn pad_planes(x: &[f64], planes: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    if pad == 0 {
        return x[..planes * h * w].to_vec();
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; planes * ph * pw];
    for p in 0..planes {
        for r in 0..h {
            let src = &x[(p * h + r) * w..][..w];
            out[(p * ph + r + pad) * pw + pad..][..w].copy_from_slice(src);
        }
    }
    out
}

/// Stride-1 3×3 correlation over already padded planes of width `pw`.
/// Accumulates into `out` (`out_ch` planes of `oh×ow`) tap by tap in
/// `(c, ky, kx)` order; the caller adds the bias. Output channels are
/// processed in blocks of four so every input load feeds four accumulators.
fn correlate3x3(
    xp: &[f64],
    in_ch: usize,
    ph: usize,
    pw: usize,
    w: &[f64],
    out_ch: usize,
    out: &mut [f64],
) {
    let (oh, ow) = (ph - 2, pw - 2);
    let plane = oh * ow;
    let blocked = out_ch / 4 * 4;
    for o in (0..blocked).step_by(4) {
        let (y0, rest) = out[o * plane..(o + 4) * plane].split_at_mut(plane);
        let (y1, rest) = rest.split_at_mut(plane);
        let (y2, y3) = rest.split_at_mut(plane);
        for c in 0..in_ch {
            let k = |d: usize| -> [f64; 9] {
                w[((o + d) * in_ch + c) * 9..][..9].try_into().expect("3x3 kernel")
            };
            let ks = [k(0), k(1), k(2), k(3)];
            let xc = &xp[c * ph * pw..(c + 1) * ph * pw];
            for oy in 0..oh {
                let r0 = &xc[oy * pw..][..ow + 2];
                let r1 = &xc[(oy + 1) * pw..][..ow + 2];
                let r2 = &xc[(oy + 2) * pw..][..ow + 2];
                let rows = [
                    &mut y0[oy * ow..][..ow],
                    &mut y1[oy * ow..][..ow],
                    &mut y2[oy * ow..][..ow],
                    &mut y3[oy * ow..][..ow],
                ];
                let [a0, a1, a2, a3] = rows;
                for ox in 0..ow {
                    let xs = [
                        r0[ox],
                        r0[ox + 1],
                        r0[ox + 2],
                        r1[ox],
                        r1[ox + 1],
                        r1[ox + 2],
                        r2[ox],
                        r2[ox + 1],
                        r2[ox + 2],
                    ];
                    let mut acc = [a0[ox], a1[ox], a2[ox], a3[ox]];
                    for t in 0..9 {
                        for d in 0..4 {
                            acc[d] += ks[d][t] * xs[t];
                        }
                    }
                    a0[ox] = acc[0];
                    a1[ox] = acc[1];
                    a2[ox] = acc[2];
                    a3[ox] = acc[3];
                }
            }
        }
    }
    for o in blocked..out_ch {
        let y = &mut out[o * plane..(o + 1) * plane];
        for c in 0..in_ch {
            let k: &[f64; 9] = w[(o * in_ch + c) * 9..][..9].try_into().expect("3x3 kernel");
            let xc = &xp[c * ph * pw..(c + 1) * ph * pw];
            for oy in 0..oh {
                let r0 = &xc[oy * pw..][..ow + 2];
                let r1 = &xc[(oy + 1) * pw..][..ow + 2];
                let r2 = &xc[(oy + 2) * pw..][..ow + 2];
                let yrow = &mut y[oy * ow..][..ow];
                for ox in 0..ow {
                    let mut acc = yrow[ox];
                    acc += k[0] * r0[ox];
                    acc += k[1] * r0[ox + 1];
                    acc += k[2] * r0[ox + 2];
                    acc += k[3] * r1[ox];
                    acc += k[4] * r1[ox + 1];
                    acc += k[5] * r1[ox + 2];
                    acc += k[6] * r2[ox];
                    acc += k[7] * r2[ox + 1];
                    acc += k[8] * r2[ox + 2];
                    yrow[ox] = acc;
                }
            }
        }
    }
}

#[inline]
fn is_fast3x3(g: &Geometry) -> bool {
    g.kh == 3 && g.kw == 3 && g.stride == 1 && g.pad <= 2
}

fn forward_sample(g: &Geometry, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    if !is_fast3x3(g) {
        return forward_sample_generic(g, x, w, b, out);
    }
    out.fill(0.0);
    let xp = pad_planes(x, g.in_ch, g.in_h, g.in_w, g.pad);
    correlate3x3(&xp, g.in_ch, g.in_h + 2 * g.pad, g.in_w + 2 * g.pad, w, g.out_ch, out);
    let plane = g.out_h * g.out_w;
    for (o, y) in out.chunks_mut(plane).enumerate() {
        let bv = b[o];
        for yv in y.iter_mut() {
            *yv += bv;
        }
    }
}

/// Weight and bias gradients of a stride-1 3×3 convolution for one sample,
/// plus the input gradient when `gx` is given.
fn backward_sample_fast3x3(
    g: &Geometry,
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    gx: Option<&mut [f64]>,
) -> SampleGrads {
    let plane = g.out_h * g.out_w;
    let (ph, pw) = (g.in_h + 2 * g.pad, g.in_w + 2 * g.pad);
    let xp = pad_planes(x, g.in_ch, g.in_h, g.in_w, g.pad);
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.out_ch];
    let ow = g.out_w;
    let lanes = ow / 4 * 4;
    for o in 0..g.out_ch {
        let go = &gy[o * plane..(o + 1) * plane];
        gb[o] = go.iter().sum();
        for c in 0..g.in_ch {
            let xc = &xp[c * ph * pw..(c + 1) * ph * pw];
            let mut acc = [[0.0f64; 4]; 9];
            let mut tail = [0.0f64; 9];
            for oy in 0..g.out_h {
                let grow = &go[oy * ow..][..ow];
                let rows = [
                    &xc[oy * pw..][..ow + 2],
                    &xc[(oy + 1) * pw..][..ow + 2],
                    &xc[(oy + 2) * pw..][..ow + 2],
                ];
                for j in (0..lanes).step_by(4) {
                    let gc: [f64; 4] = grow[j..j + 4].try_into().expect("4 lanes");
                    for t in 0..9 {
                        let xs: [f64; 4] = rows[t / 3][j + t % 3..j + t % 3 + 4]
                            .try_into()
                            .expect("4 lanes");
                        for l in 0..4 {
                            acc[t][l] += gc[l] * xs[l];
                        }
                    }
                }
                for j in lanes..ow {
                    for t in 0..9 {
                        tail[t] += grow[j] * rows[t / 3][j + t % 3];
                    }
                }
            }
            for t in 0..9 {
                let a = acc[t];
                gw[(o * g.in_ch + c) * 9 + t] = ((a[0] + a[1]) + (a[2] + a[3])) + tail[t];
            }
        }
    }
    if let Some(gx) = gx {
        // Input gradient = full correlation of grad_out with the flipped,
        // channel-transposed kernel.
        let border = 2 - g.pad;
        let gp = pad_planes(gy, g.out_ch, g.out_h, g.out_w, border);
        let mut wt = vec![0.0; w.len()];
        for o in 0..g.out_ch {
            for c in 0..g.in_ch {
                for t in 0..9 {
                    wt[(c * g.out_ch + o) * 9 + (8 - t)] = w[(o * g.in_ch + c) * 9 + t];
                }
            }
        }
        gx.fill(0.0);
        correlate3x3(
            &gp,
            g.out_ch,
            g.out_h + 2 * border,
            g.out_w + 2 * border,
            &wt,
            g.in_ch,
            gx,
        );
    }
    SampleGrads {
        weights: gw,
        bias: gb,
    }
}

fn forward_sample_generic(g: &Geometry, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let plane = g.out_h * g.out_w;
    out.fill(0.0);
    for o in 0..g.out_ch {
        let y = &mut out[o * plane..(o + 1) * plane];
        for c in 0..g.in_ch {
            let xc = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
            for ky in 0..g.kh {
                let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.in_h, g.out_h);
                for kx in 0..g.kw {
                    let wv = w[((o * g.in_ch + c) * g.kh + ky) * g.kw + kx];
                    let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.in_w, g.out_w);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let xrow = &xc[iy * g.in_w..(iy + 1) * g.in_w];
                        let yrow = &mut y[oy * g.out_w + ox0..oy * g.out_w + ox1];
                        let ix0 = ox0 * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            for (yv, &xv) in yrow.iter_mut().zip(&xrow[ix0..]) {
                                *yv += wv * xv;
                            }
                        } else {
                            for (yv, &xv) in yrow.iter_mut().zip(xrow[ix0..].iter().step_by(g.stride)) {
                                *yv += wv * xv;
                            }
                        }
                    }
                }
            }
        }
        let bv = b[o];
        for yv in y.iter_mut() {
            *yv += bv;
        }
    }
}

/// Convolution forward pass, `[N, C, H, W] -> [N, O, H', W']`.
pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let g = params.geometry(input)?;
    let in_len = g.in_ch * g.in_h * g.in_w;
    let out_len = g.out_ch * g.out_h * g.out_w;
    let mut out = vec![0.0; g.batch * out_len];
    let w = params.weights.data();
    let b = params.bias.data();
    out.par_chunks_mut(out_len)
        .zip(input.data().par_chunks(in_len))
        .for_each(|(y, x)| forward_sample(&g, x, w, b, y));
    Tensor::from_vec(&[g.batch, g.out_ch, g.out_h, g.out_w], out)
}

/// Straight nested-loop convolution, kept as the numerical reference for
/// [`conv2d`].
pub fn conv2d_reference(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let g = params.geometry(input)?;
    let x = input.data();
    let w = params.weights.data();
    let mut out = Vec::with_capacity(g.batch * g.out_ch * g.out_h * g.out_w);
    for n in 0..g.batch {
        for o in 0..g.out_ch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = 0.0;
                    for c in 0..g.in_ch {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                acc += w[((o * g.in_ch + c) * g.kh + ky) * g.kw + kx]
                                    * x[((n * g.in_ch + c) * g.in_h + iy) * g.in_w + ix];
                            }
                        }
                    }
                    out.push(acc + params.bias.data()[o]);
                }
            }
        }
    }
    Tensor::from_vec(&[g.batch, g.out_ch, g.out_h, g.out_w], out)
}

struct SampleGrads {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn backward_sample(
    g: &Geometry,
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    gx: Option<&mut [f64]>,
) -> SampleGrads {
    if is_fast3x3(g) {
        return backward_sample_fast3x3(g, x, w, gy, gx);
    }
    let plane = g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.out_ch];
    let mut gx = gx;
    if let Some(gx) = gx.as_deref_mut() {
        gx.fill(0.0);
    }
    let mut strided = Vec::new();
    for o in 0..g.out_ch {
        let go = &gy[o * plane..(o + 1) * plane];
        gb[o] = go.iter().sum();
        for c in 0..g.in_ch {
            let xc = &x[c * in_plane..(c + 1) * in_plane];
            for ky in 0..g.kh {
                let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.in_h, g.out_h);
                for kx in 0..g.kw {
                    let widx = ((o * g.in_ch + c) * g.kh + ky) * g.kw + kx;
                    let wv = w[widx];
                    let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.in_w, g.out_w);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let ix0 = ox0 * g.stride + kx - g.pad;
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &go[oy * g.out_w + ox0..oy * g.out_w + ox1];
                        if g.stride == 1 {
                            let xrow = &xc[iy * g.in_w + ix0..iy * g.in_w + ix0 + grow.len()];
                            acc += dot(grow, xrow);
                            if let Some(gx) = gx.as_deref_mut() {
                                let gxrow =
                                    &mut gx[c * in_plane + iy * g.in_w + ix0..][..grow.len()];
                                for (d, &gv) in gxrow.iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            }
                        } else {
                            strided.clear();
                            strided.extend(
                                xc[iy * g.in_w + ix0..]
                                    .iter()
                                    .step_by(g.stride)
                                    .take(grow.len()),
                            );
                            acc += dot(grow, &strided);
                            if let Some(gx) = gx.as_deref_mut() {
                                let base = c * in_plane + iy * g.in_w + ix0;
                                for (j, &gv) in grow.iter().enumerate() {
                                    gx[base + j * g.stride] += wv * gv;
                                }
                            }
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    SampleGrads {
        weights: gw,
        bias: gb,
    }
}

/// Gradients of a convolution given the upstream gradient `grad_out`.
///
/// Per-sample parameter gradients are summed in sample order, so the result
/// does not depend on how many threads ran.
pub fn conv2d_backward(
    input: &Tensor,
    params: &ConvParams,
    grad_out: &Tensor,
    want_input_grad: bool,
) -> Result<ConvGrads> {
    let g = params.geometry(input)?;
    let expected = [g.batch, g.out_ch, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_out {:?} but output is {expected:?}", grad_out.shape()),
        ));
    }
    let in_len = g.in_ch * g.in_h * g.in_w;
    let out_len = g.out_ch * g.out_h * g.out_w;
    let w = params.weights.data();
    let mut gx = if want_input_grad {
        vec![0.0; input.len()]
    } else {
        Vec::new()
    };

    let per_sample: Vec<SampleGrads> = if want_input_grad {
        gx.par_chunks_mut(in_len)
            .zip(input.data().par_chunks(in_len))
            .zip(grad_out.data().par_chunks(out_len))
            .map(|((gxs, x), gy)| backward_sample(&g, x, w, gy, Some(gxs)))
            .collect()
    } else {
        input
            .data()
            .par_chunks(in_len)
            .zip(grad_out.data().par_chunks(out_len))
            .map(|(x, gy)| backward_sample(&g, x, w, gy, None))
            .collect()
    };

    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.out_ch];
    for s in &per_sample {
        for (a, b) in gw.iter_mut().zip(&s.weights) {
            *a += b;
        }
        for (a, b) in gb.iter_mut().zip(&s.bias) {
            *a += b;
        }
    }
    Ok(ConvGrads {
        input: if want_input_grad {
            Some(Tensor::from_vec(input.shape(), gx)?)
        } else {
            None
        },
        weights: Tensor::from_vec(params.weights.shape(), gw)?,
        bias: Tensor::from_vec(&[g.out_ch], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(o: usize, c: usize, k: usize, stride: usize, pad: usize, w: f64, b: f64) -> ConvParams {
        ConvParams::new(
            Tensor::filled(&[o, c, k, k], w),
            Tensor::filled(&[o], b),
            stride,
            pad,
        )
        .unwrap()
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &params(1, 1, 2, 1, 0, 1.0, 0.0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn zero_input_gives_bias() {
        let x = Tensor::zeros(&[2, 3, 5, 5]);
        let mut p = params(2, 3, 3, 1, 1, 0.7, 0.0);
        p.bias = Tensor::from_vec(&[2], vec![-1.5, 2.25]).unwrap();
        let y = conv2d(&x, &p).unwrap();
        for n in 0..2 {
            for o in 0..2 {
                let start = (n * 2 + o) * 25;
                assert!(y.data()[start..start + 25].iter().all(|&v| v == p.bias.data()[o]));
            }
        }
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let err = conv2d(&x, &params(1, 3, 3, 1, 0, 1.0, 0.0)).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
        let err = conv2d(&x, &params(1, 2, 5, 1, 0, 1.0, 0.0)).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }

    #[test]
    fn output_size_formula() {
        assert_eq!(conv_output_size(5, 3, 2, 1), Some(3));
        assert_eq!(conv_output_size(128, 3, 1, 1), Some(128));
        assert_eq!(conv_output_size(2, 5, 1, 1), None);
    }

    #[test]
    fn valid_range_matches_bruteforce() {
        for input in 1..7 {
            for k in 0..4 {
                for pad in 0..3 {
                    for stride in 1..4 {
                        let Some(output) = conv_output_size(input, k + 1, stride, pad) else {
                            continue;
                        };
                        let brute: Vec<usize> = (0..output)
                            .filter(|&o| {
                                let i = (o * stride + k) as isize - pad as isize;
                                i >= 0 && i < input as isize
                            })
                            .collect();
                        let (lo, hi) = valid_range(k, pad, stride, input, output);
                        assert_eq!(brute, (lo..hi).collect::<Vec<_>>());
                    }
                }
            }
        }
    }
}
