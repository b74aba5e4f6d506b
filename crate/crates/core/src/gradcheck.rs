//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use std::time::Instant;

use crate::error::Result;
use crate::nn::{preset, LayerSpec, Mode, Model};
use crate::ops::{self, ConvParams};
use crate::optim::sparse_ce;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Step used by the verification suite.
pub const SUITE_STEP: f64 = 1e-5;
/// Largest relative error the suite accepts.
pub const SUITE_TOLERANCE: f64 = 1e-6;
/// Denominator floor for [`max_relative_error`] in the suite. Central
/// differences of an `O(1)` loss carry about `1e-16 / 1e-5` of rounding
/// error, so gradients far below this floor are compared absolutely.
pub const SUITE_FLOOR: f64 = 1e-4;

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every element `i` of `x`.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over all elements.
///
/// The floor keeps entries that are zero in both gradients from dividing by
/// zero; it should sit well below the magnitudes being compared.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}


/// Result of one finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Elements compared.
    pub checked: usize,
    /// Elements skipped because a probe crossed a non-smooth point.
    pub excluded: usize,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= self.tolerance
    }
}

fn random_tensor(shape: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).expect("non-empty shape")
}

/// `Σ r ⊙ y`, a scalar whose gradient with respect to `y` is `r`.
fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn outcome(name: &str, pairs: &[(&Tensor, &Tensor)], excluded: usize, start: Instant) -> CheckOutcome {
    let max_rel_error = pairs
        .iter()
        .map(|(a, n)| max_relative_error(a, n, SUITE_FLOOR))
        .fold(0.0, f64::max);
    CheckOutcome {
        name: name.to_string(),
        max_rel_error,
        tolerance: SUITE_TOLERANCE,
        checked: pairs.iter().map(|(a, _)| a.len()).sum::<usize>() - excluded,
        excluded,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Input, weight and bias gradients of `conv2d` under a random projection.
pub fn check_conv2d(
    input_shape: [usize; 4],
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = Rng::new(seed);
    let x = random_tensor(&input_shape, &mut rng, -1.0, 1.0);
    let w = random_tensor(&[out_channels, input_shape[1], kernel, kernel], &mut rng, -1.0, 1.0);
    let b = random_tensor(&[out_channels], &mut rng, -1.0, 1.0);
    let params = ConvParams::new(w.clone(), b.clone(), stride, padding)?;
    let y = ops::conv2d(&x, &params)?;
    let r = random_tensor(y.shape(), &mut rng, -1.0, 1.0);
    let g = ops::conv2d_backward(&x, &params, &r, true)?;
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| {
        let p = ConvParams::new(w.clone(), b.clone(), stride, padding).expect("shapes fixed");
        project(&ops::conv2d(x, &p).expect("shapes fixed"), &r)
    };
    let nx = finite_diff_grad(|t| loss(t, &w, &b), &x, SUITE_STEP);
    let nw = finite_diff_grad(|t| loss(&x, t, &b), &w, SUITE_STEP);
    let nb = finite_diff_grad(|t| loss(&x, &w, t), &b, SUITE_STEP);
    let gx = g.input.expect("input gradient requested");
    let name = format!("conv2d k{kernel} s{stride} p{padding} {input_shape:?}");
    Ok(outcome(&name, &[(&gx, &nx), (&g.weights, &nw), (&g.bias, &nb)], 0, start))
}

/// Distinct values spaced at least 1e-3 apart, so no window holds a tie
/// within reach of the probe step.
fn tie_free(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 * 2.0 - 1.0).collect();
    rng.shuffle(&mut v);
    let jitter = 0.4 / n as f64;
    let data = v.into_iter().map(|x| x + rng.uniform_range(-jitter, jitter)).collect();
    Tensor::from_vec(shape, data).expect("non-empty shape")
}

pub fn check_maxpool2(seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = Rng::new(seed);
    let x = tie_free(&[2, 3, 6, 8], &mut rng);
    let y = ops::maxpool2(&x)?;
    let r = random_tensor(y.shape(), &mut rng, -1.0, 1.0);
    let g = ops::maxpool2_backward(&x, &r)?;
    let n = finite_diff_grad(|t| project(&ops::maxpool2(t).expect("even dims"), &r), &x, SUITE_STEP);
    Ok(outcome("maxpool2", &[(&g, &n)], 0, start))
}

pub fn check_dense(seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = Rng::new(seed);
    let x = random_tensor(&[4, 7], &mut rng, -1.0, 1.0);
    let w = random_tensor(&[7, 5], &mut rng, -1.0, 1.0);
    let b = random_tensor(&[5], &mut rng, -1.0, 1.0);
    let r = random_tensor(&[4, 5], &mut rng, -1.0, 1.0);
    let g = ops::dense_backward(&x, &w, &b, &r)?;
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| project(&ops::dense(x, w, b).expect("shapes fixed"), &r);
    let nx = finite_diff_grad(|t| loss(t, &w, &b), &x, SUITE_STEP);
    let nw = finite_diff_grad(|t| loss(&x, t, &b), &w, SUITE_STEP);
    let nb = finite_diff_grad(|t| loss(&x, &w, t), &b, SUITE_STEP);
    Ok(outcome("dense", &[(&g.input, &nx), (&g.weights, &nw), (&g.bias, &nb)], 0, start))
}

/// Inputs are kept at least 1e-2 away from the kink at 0.
pub fn check_relu(seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = Rng::new(seed);
    let x = random_tensor(&[3, 4, 5], &mut rng, -1.0, 1.0).map(|v| if v.abs() < 1e-2 { v + 0.05 } else { v });
    let r = random_tensor(x.shape(), &mut rng, -1.0, 1.0);
    let g = ops::relu_backward(&x, &r)?;
    let n = finite_diff_grad(|t| project(&ops::relu(t), &r), &x, SUITE_STEP);
    Ok(outcome("relu", &[(&g, &n)], 0, start))
}

/// Fused gradient `(p − onehot)/N` against differences of the loss taken
/// through softmax.
pub fn check_softmax_ce(seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = Rng::new(seed);
    let logits = random_tensor(&[3, 4], &mut rng, -2.0, 2.0);
    let labels: Vec<usize> = (0..3).map(|_| rng.below(4) as usize).collect();
    let loss = |z: &Tensor| sparse_ce(&ops::softmax(z).expect("finite"), &labels).expect("labels in range").0;
    let (_, g) = sparse_ce(&ops::softmax(&logits)?, &labels)?;
    let n = finite_diff_grad(loss, &logits, SUITE_STEP);
    Ok(outcome("softmax+cross-entropy", &[(&g, &n)], 0, start))
}

/// Sign of every ReLU input and winner of every pooling window from the
/// last captured pass.
fn activation_pattern(model: &Model, input: &Tensor) -> Result<Vec<usize>> {
    let mut pattern = Vec::new();
    for (i, layer) in model.spec().layers.iter().enumerate() {
        let x = if i == 0 { Some(input) } else { model.captured(i - 1) };
        let x = x.expect("forward pass captured");
        match layer {
            LayerSpec::Relu => pattern.extend(x.data().iter().map(|&v| usize::from(v > 0.0))),
            LayerSpec::MaxPool2 => pattern.extend(ops::maxpool2_argmax(x)?),
            _ => {}
        }
    }
    Ok(pattern)
}

/// Cross-entropy of a small vgg-nano (train mode, fixed dropout mask) with
/// respect to every parameter. Parameters whose probes change the ReLU or
/// pooling pattern sit on a non-smooth point and are excluded.
pub fn check_network(size: usize, batch: usize, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let spec = preset("vgg-nano")?.with_input_shape(1, size, size);
    let classes = spec.num_classes();
    let mut model = Model::build(spec, seed)?;
    let mut rng = Rng::derived(seed, &[1]);
    // non-zero biases so the probes see a generic point
    for p in model.params_mut().iter_mut().skip(1).step_by(2) {
        p.data_mut().iter_mut().for_each(|b| *b = rng.uniform_range(-0.05, 0.05));
    }
    let x = random_tensor(&[batch, 1, size, size], &mut rng, 0.0, 1.0);
    let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();
    let mode = Mode::Train { dropout_seed: seed };

    let probs = model.forward(&x, mode, true)?;
    let base_pattern = activation_pattern(&model, &x)?;
    let (_, upstream) = sparse_ce(&probs, &labels)?;
    let analytic = model.backward(&upstream)?;

    let mut probe = model.clone();
    let mut eval = |params: &[Tensor], slot: usize, i: usize, v: f64| -> Result<(f64, bool)> {
        probe.params_mut()[slot].data_mut()[i] = v;
        let p = probe.forward(&x, mode, true)?;
        let same = activation_pattern(&probe, &x)? == base_pattern;
        probe.params_mut()[slot].data_mut()[i] = params[slot].data()[i];
        Ok((sparse_ce(&p, &labels)?.0, same))
    };
    let params = model.params().to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut analytic_kept = Vec::with_capacity(params.len());
    let mut excluded = 0;
    for (slot, p) in params.iter().enumerate() {
        let mut n = Tensor::zeros(p.shape());
        let mut a = analytic[slot].clone();
        for i in 0..p.len() {
            let v = p.data()[i];
            let (plus, same_plus) = eval(&params, slot, i, v + SUITE_STEP)?;
            let (minus, same_minus) = eval(&params, slot, i, v - SUITE_STEP)?;
            if same_plus && same_minus {
                n.data_mut()[i] = (plus - minus) / (2.0 * SUITE_STEP);
            } else {
                excluded += 1;
                a.data_mut()[i] = 0.0;
            }
        }
        numeric.push(n);
        analytic_kept.push(a);
    }
    let pairs: Vec<(&Tensor, &Tensor)> = analytic_kept.iter().zip(&numeric).collect();
    Ok(outcome(&format!("vgg-nano end-to-end {size}x{size} batch {batch}"), &pairs, excluded, start))
}

/// Every check of the verification suite, in a fixed order.
pub fn run_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        check_conv2d([1, 2, 5, 5], 3, 3, 2, 1, seed)?,
        check_conv2d([2, 3, 7, 6], 4, 3, 1, 1, seed + 1)?,
        check_conv2d([1, 2, 6, 6], 2, 2, 1, 0, seed + 2)?,
        check_maxpool2(seed)?,
        check_dense(seed)?,
        check_relu(seed)?,
        check_softmax_ce(seed)?,
        check_network(8, 2, seed)?,
    ])
}
