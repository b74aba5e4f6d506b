//! Materialised model: parameters, forward pass with optional activation
//! capture, and backpropagation.

use crate::error::{Error, Result};
use crate::nn::spec::{LayerSpec, ModelSpec, Shape};
use crate::ops::{self, ConvParams};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout is the identity.
    Eval,
    /// Inverted dropout driven by `dropout_seed`.
    Train { dropout_seed: u64 },
}

#[derive(Debug, Clone)]
struct ForwardCache {
    input: Tensor,
    /// Output of every layer, in order. The last entry holds probabilities.
    outputs: Vec<Tensor>,
    /// Per dropout layer: the multiplier applied to each element (0 or 1/(1−rate)).
    masks: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    shapes: Vec<Shape>,
    params: Vec<Tensor>,
    /// For layers with parameters, the index of their weight tensor in
    /// `params`; the bias follows it.
    slots: Vec<Option<usize>>,
    cache: Option<ForwardCache>,
}

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::from_vec(shape, data).expect("shape product matches data length")
}

impl Model {
    /// Builds a model with He-uniform weights (bound `√(6/fan_in)`) and zero
    /// biases. Weights are drawn layer by layer in row-major order from a
    /// single stream seeded with `init_seed`.
    pub fn build(spec: ModelSpec, init_seed: u64) -> Result<Self> {
        let shapes = spec.output_shapes()?;
        let mut rng = Rng::new(init_seed);
        let mut params = Vec::new();
        let mut slots = Vec::with_capacity(spec.layers.len());
        let mut prev = Shape::Spatial {
            channels: spec.input_shape.0,
            height: spec.input_shape.1,
            width: spec.input_shape.2,
        };
        for (layer, &out) in spec.layers.iter().zip(&shapes) {
            match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    ..
                } => {
                    let in_ch = prev.dims()[0];
                    slots.push(Some(params.len()));
                    params.push(he_uniform(
                        &[out_channels, in_ch, kernel, kernel],
                        in_ch * kernel * kernel,
                        &mut rng,
                    ));
                    params.push(Tensor::zeros(&[out_channels]));
                }
                LayerSpec::Dense { units } => {
                    let fan_in = prev.numel();
                    slots.push(Some(params.len()));
                    params.push(he_uniform(&[fan_in, units], fan_in, &mut rng));
                    params.push(Tensor::zeros(&[units]));
                }
                _ => slots.push(None),
            }
            prev = out;
        }
        Ok(Self {
            spec,
            shapes,
            params,
            slots,
            cache: None,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layer_shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Replaces every parameter tensor; shapes must match exactly.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape(
                "set_params",
                format!("{} tensors for {} parameters", params.len(), self.params.len()),
            ));
        }
        for (i, (new, old)) in params.iter().zip(&self.params).enumerate() {
            if new.shape() != old.shape() {
                return Err(Error::shape(
                    "set_params",
                    format!("parameter {i}: {:?} vs {:?}", new.shape(), old.shape()),
                ));
            }
        }
        self.params = params;
        self.cache = None;
        Ok(())
    }

    fn conv_params(&self, layer: usize) -> ConvParams {
        let LayerSpec::Conv {
            stride, padding, ..
        } = self.spec.layers[layer]
        else {
            unreachable!("layer {layer} is not a convolution")
        };
        let slot = self.slots[layer].expect("conv layer has parameters");
        ConvParams {
            stride,
            padding,
            weights: self.params[slot].clone(),
            bias: self.params[slot + 1].clone(),
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let (c, h, w) = self.spec.input_shape;
        let s = batch.shape();
        if s.len() != 4 || s[1] != c || s[2] != h || s[3] != w {
            return Err(Error::shape(
                "forward",
                format!("batch {s:?} does not match model input [N, {c}, {h}, {w}]"),
            ));
        }
        Ok(())
    }

    fn apply_layer(
        &self,
        i: usize,
        x: &Tensor,
        mode: Mode,
        mask_out: Option<&mut Option<Vec<f64>>>,
    ) -> Result<Tensor> {
        let n = x.shape()[0];
        Ok(match self.spec.layers[i] {
            LayerSpec::Conv { .. } => ops::conv2d(x, &self.conv_params(i))?,
            LayerSpec::MaxPool2 => ops::maxpool2(x)?,
            LayerSpec::Relu => ops::relu(x),
            LayerSpec::Flatten => x.clone().reshape(&[n, x.len() / n])?,
            LayerSpec::Dense { .. } => {
                let slot = self.slots[i].expect("dense layer has parameters");
                ops::dense(x, &self.params[slot], &self.params[slot + 1])?
            }
            LayerSpec::Dropout { rate } => match mode {
                Mode::Train { dropout_seed } if rate > 0.0 => {
                    let mut rng = Rng::derived(dropout_seed, &[i as u64]);
                    let scale = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| if rng.uniform() < rate { 0.0 } else { scale })
                        .collect();
                    let y = Tensor::from_vec(
                        x.shape(),
                        x.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
                    )?;
                    if let Some(slot) = mask_out {
                        *slot = Some(mask);
                    }
                    y
                }
                _ => x.clone(),
            },
            LayerSpec::SoftmaxOutput => ops::softmax(x)?,
        })
    }

    /// Runs the network on a `[N, C, H, W]` batch and returns class
    /// probabilities `[N, K]`. With `capture`, every layer output is kept for
    /// [`Model::backward`] and CAM; otherwise any previous capture is dropped.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode, capture: bool) -> Result<Tensor> {
        self.check_batch(batch)?;
        self.cache = None;
        if !capture {
            return self.run_from(0, batch.clone(), mode);
        }
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.spec.layers.len());
        let mut masks = vec![None; self.spec.layers.len()];
        for i in 0..self.spec.layers.len() {
            let x = outputs.last().unwrap_or(batch);
            let y = self.apply_layer(i, x, mode, Some(&mut masks[i]))?;
            outputs.push(y);
        }
        let probs = outputs.last().cloned().expect("at least one layer");
        self.cache = Some(ForwardCache {
            input: batch.clone(),
            outputs,
            masks,
        });
        Ok(probs)
    }

    /// Eval-mode probabilities without touching the capture cache; safe to
    /// call concurrently on a shared model.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        self.run_from(0, batch.clone(), Mode::Eval)
    }

    /// Eval-mode pre-softmax scores `[N, K]`.
    pub fn predict_logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        self.logits_from(0, batch.clone())
    }

    fn run_from(&self, start: usize, mut x: Tensor, mode: Mode) -> Result<Tensor> {
        for i in start..self.spec.layers.len() {
            x = self.apply_layer(i, &x, mode, None)?;
        }
        Ok(x)
    }

    /// Eval-mode logits computed from layer `start` onward, where `x` stands
    /// in for the input to layer `start`.
    pub fn logits_from(&self, start: usize, mut x: Tensor) -> Result<Tensor> {
        let end = self.spec.layers.len() - 1;
        for i in start..end {
            x = self.apply_layer(i, &x, Mode::Eval, None)?;
        }
        Ok(x)
    }

    /// Eval-mode logits given a replacement for the *output* of `layer`.
    pub fn logits_after(&self, layer: usize, activation: Tensor) -> Result<Tensor> {
        let expected = self.shapes[layer].dims();
        if activation.shape().len() != expected.len() + 1 || activation.shape()[1..] != expected[..] {
            return Err(Error::shape(
                "logits_after",
                format!("activation {:?} vs layer output {expected:?}", activation.shape()),
            ));
        }
        self.logits_from(layer + 1, activation)
    }

    /// Drops any captured forward pass.
    pub fn clear_capture(&mut self) {
        self.cache = None;
    }

    /// Output of `layer` from the last captured forward pass.
    pub fn captured(&self, layer: usize) -> Option<&Tensor> {
        self.cache.as_ref().and_then(|c| c.outputs.get(layer))
    }

    /// Pre-softmax scores from the last captured forward pass.
    pub fn captured_logits(&self) -> Option<&Tensor> {
        let n = self.spec.layers.len();
        self.captured(n - 2)
    }

    fn layer_input<'a>(cache: &'a ForwardCache, i: usize) -> &'a Tensor {
        if i == 0 {
            &cache.input
        } else {
            &cache.outputs[i - 1]
        }
    }

    /// Backpropagates `upstream`, the gradient of the loss with respect to
    /// the pre-softmax logits, through the captured pass. Stops once the
    /// gradient at the output of `stop_at` is known (if given), otherwise
    /// runs to the input and fills every parameter gradient.
    fn backprop(
        &self,
        upstream: &Tensor,
        stop_at: Option<usize>,
    ) -> Result<(Vec<Tensor>, Option<Tensor>)> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardCache)?;
        let n_layers = self.spec.layers.len();
        let logits = &cache.outputs[n_layers - 2];
        if upstream.shape() != logits.shape() {
            return Err(Error::shape(
                "backward",
                format!("upstream {:?} vs logits {:?}", upstream.shape(), logits.shape()),
            ));
        }
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut g = upstream.clone();
        for i in (0..n_layers - 1).rev() {
            if stop_at == Some(i) {
                return Ok((grads, Some(g)));
            }
            let x = Self::layer_input(cache, i);
            g = match self.spec.layers[i] {
                LayerSpec::Conv { .. } => {
                    let r = ops::conv2d_backward(x, &self.conv_params(i), &g, i > 0)?;
                    let slot = self.slots[i].expect("conv layer has parameters");
                    grads[slot] = r.weights;
                    grads[slot + 1] = r.bias;
                    match r.input {
                        Some(gx) => gx,
                        None => break,
                    }
                }
                LayerSpec::MaxPool2 => ops::maxpool2_backward(x, &g)?,
                LayerSpec::Relu => ops::relu_backward(x, &g)?,
                LayerSpec::Flatten => g.reshape(x.shape())?,
                LayerSpec::Dense { .. } => {
                    let slot = self.slots[i].expect("dense layer has parameters");
                    let r = ops::dense_backward(x, &self.params[slot], &self.params[slot + 1], &g)?;
                    grads[slot] = r.weights;
                    grads[slot + 1] = r.bias;
                    r.input
                }
                LayerSpec::Dropout { .. } => match &cache.masks[i] {
                    Some(mask) => {
                        let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                        Tensor::from_vec(g.shape(), data)?
                    }
                    None => g,
                },
                LayerSpec::SoftmaxOutput => unreachable!("softmax is the final layer"),
            };
        }
        Ok((grads, None))
    }

    /// Parameter gradients (same order and shapes as [`Model::params`]) for
    /// an upstream gradient with respect to the logits. Dropout masks from
    /// the captured forward pass are reused.
    pub fn backward(&self, upstream: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.backprop(upstream, None)?.0)
    }

    /// Gradient with respect to the captured output of `layer`; shaped like
    /// that output.
    pub fn backward_to_layer(&self, upstream: &Tensor, layer: usize) -> Result<Tensor> {
        if layer >= self.spec.layers.len() - 1 {
            return Err(Error::InvalidLayer {
                layer,
                reason: "no activation gradient past the logits".into(),
            });
        }
        let (_, g) = self.backprop(upstream, Some(layer))?;
        g.ok_or(Error::NoForwardCache)
    }
}
