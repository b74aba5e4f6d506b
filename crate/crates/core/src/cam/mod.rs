//! Grad-CAM and Grad-CAM++ class-activation maps.
//!
//! For class `c` with score `Y` and feature maps `A^k` (each `U×V`,
//! `Z = U·V`) at the target convolution:
//!
//! * Grad-CAM: `α_k = (1/Z) Σ_ij ∂Y/∂A^k_ij`
//! * Grad-CAM++: `α_k = (1/Z) Σ_ij (∂²Y/∂(A^k_ij)² + 2·∂Y/∂A^k_ij)`
//!
//! and in both cases `L = ReLU(Σ_k α_k A^k)`.

mod heatmap;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{Mode, Model};
use crate::tensor::Tensor;

pub use heatmap::{colormap, render_overlay, save_heatmap, Heatmap};

/// Which function of the logits is explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreKind {
    /// `Y = S_c`, the pre-softmax score.
    #[default]
    Logit,
    /// `Y = softmax(S)_c`.
    Probability,
    /// `Y = exp(S_c)`.
    ExpLogit,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Logit => "logit",
            ScoreKind::Probability => "probability",
            ScoreKind::ExpLogit => "exp-logit",
        }
    }

    /// Score value and its gradient with respect to the logits of one sample.
    fn evaluate(self, logits: &[f64], class: usize) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; logits.len()];
        match self {
            ScoreKind::Logit => {
                g[class] = 1.0;
                (logits[class], g)
            }
            ScoreKind::ExpLogit => {
                let y = logits[class].exp();
                g[class] = y;
                (y, g)
            }
            ScoreKind::Probability => {
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let p: Vec<f64> = exps.iter().map(|e| e / total).collect();
                let y = p[class];
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = y * (f64::from(u8::from(j == class)) - p[j]);
                }
                (y, g)
            }
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logit" => Ok(ScoreKind::Logit),
            "probability" | "prob" => Ok(ScoreKind::Probability),
            "exp-logit" | "exp_logit" | "explogit" => Ok(ScoreKind::ExpLogit),
            other => Err(Error::Config(format!(
                "unknown score kind `{other}` (valid: logit, probability, exp-logit)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianEstimator {
    /// Central second differences, restarting the forward pass after the
    /// target layer for every element.
    #[default]
    FiniteDifference,
    /// `exp(S)·(∂S/∂A)²`; requires [`ScoreKind::ExpLogit`] and a piecewise
    /// linear network after the target layer.
    ClosedForm,
}

impl FromStr for HessianEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fd" | "finite-difference" => Ok(HessianEstimator::FiniteDifference),
            "closed-form" | "closed_form" | "fast" => Ok(HessianEstimator::ClosedForm),
            other => Err(Error::Config(format!(
                "unknown Hessian estimator `{other}` (valid: fd, closed-form)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamConfig {
    /// Defaults to the deepest convolution.
    pub target_layer: Option<usize>,
    pub score_kind: ScoreKind,
    pub fd_step: f64,
    pub hessian: HessianEstimator,
}

impl Default for CamConfig {
    fn default() -> Self {
        Self {
            target_layer: None,
            score_kind: ScoreKind::Logit,
            fd_step: 1e-3,
            hessian: HessianEstimator::FiniteDifference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamMethod {
    GradCam,
    GradCamPlusPlus,
}

impl CamMethod {
    pub fn name(self) -> &'static str {
        match self {
            CamMethod::GradCam => "gradcam",
            CamMethod::GradCamPlusPlus => "gradcam_pp",
        }
    }
}

impl fmt::Display for CamMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Activations of one input at a convolution output.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapCapture {
    pub layer_index: usize,
    /// `[K, U, V]`.
    pub activations: Tensor,
}

impl FeatureMapCapture {
    pub fn maps(&self) -> usize {
        self.activations.shape()[0]
    }

    /// Pixels per feature map, `U·V`.
    pub fn z(&self) -> usize {
        self.activations.shape()[1] * self.activations.shape()[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CamWeights {
    pub alpha: Vec<f64>,
    pub class_index: usize,
    pub method: CamMethod,
}

/// Target layer from the config, checked to be a convolution.
pub fn resolve_layer(model: &Model, cfg: &CamConfig) -> Result<usize> {
    let layers = &model.spec().layers;
    let layer = match cfg.target_layer {
        Some(l) => l,
        None => model
            .spec()
            .last_conv()
            .ok_or_else(|| Error::InvalidSpec("model has no convolution layer".into()))?,
    };
    match layers.get(layer) {
        Some(l) if l.is_conv() => Ok(layer),
        _ => Err(Error::NotConvLayer(layer)),
    }
}

fn single_input(model: &Model, input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = model.spec().input_shape;
    match input.shape() {
        [1, ic, ih, iw] | [ic, ih, iw] if (*ic, *ih, *iw) == (c, h, w) => input.clone().reshape(&[1, c, h, w]),
        s => Err(Error::shape(
            "cam input",
            format!("expected [1, {c}, {h}, {w}] or [{c}, {h}, {w}], got {s:?}"),
        )),
    }
}

fn check_class(model: &Model, class: usize) -> Result<()> {
    let classes = model.spec().num_classes();
    if class >= classes {
        return Err(Error::ClassOutOfRange { value: class, classes });
    }
    Ok(())
}

/// Eval-mode pass with capture; returns the target activations.
pub fn capture(model: &mut Model, input: &Tensor, layer: usize) -> Result<FeatureMapCapture> {
    if !model.spec().layers.get(layer).is_some_and(|l| l.is_conv()) {
        return Err(Error::NotConvLayer(layer));
    }
    let x = single_input(model, input)?;
    model.forward(&x, Mode::Eval, true)?;
    let a = model.captured(layer).ok_or(Error::NoForwardCache)?;
    let dims = a.shape()[1..].to_vec();
    Ok(FeatureMapCapture {
        layer_index: layer,
        activations: a.clone().reshape(&dims)?,
    })
}

/// `Y` evaluated with the output of `layer` replaced by `activations`
/// (`[K, U, V]`).
pub fn score_from_activations(
    model: &Model,
    layer: usize,
    activations: &Tensor,
    class: usize,
    kind: ScoreKind,
) -> Result<f64> {
    check_class(model, class)?;
    let mut dims = vec![1];
    dims.extend_from_slice(activations.shape());
    let logits = model.logits_after(layer, activations.clone().reshape(&dims)?)?;
    Ok(kind.evaluate(logits.data(), class).0)
}

/// `∂Y/∂A` at the output of `layer` for one input, shaped `[K, U, V]`.
/// Runs an eval-mode forward pass with capture first.
pub fn grad_wrt_activations(
    model: &mut Model,
    input: &Tensor,
    class: usize,
    layer: usize,
    kind: ScoreKind,
) -> Result<Tensor> {
    check_class(model, class)?;
    let cap = capture(model, input, layer)?;
    activation_grad(model, class, &cap, kind)
}

fn activation_grad(model: &Model, class: usize, cap: &FeatureMapCapture, kind: ScoreKind) -> Result<Tensor> {
    let logits = model.captured_logits().ok_or(Error::NoForwardCache)?;
    let (_, upstream) = kind.evaluate(logits.data(), class);
    let upstream = Tensor::from_vec(logits.shape(), upstream)?;
    let g = model.backward_to_layer(&upstream, cap.layer_index)?;
    g.reshape(cap.activations.shape())
}

/// Central-difference second derivative of `Y` for every activation
/// element, `(Y(A + h·e) − 2Y(A) + Y(A − h·e)) / h²`.
pub fn hessian_diag_fd(
    model: &Model,
    cap: &FeatureMapCapture,
    class: usize,
    kind: ScoreKind,
    h: f64,
) -> Result<Tensor> {
    let a = &cap.activations;
    let y0 = score_from_activations(model, cap.layer_index, a, class, kind)?;
    let values = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let mut probe = a.clone();
            let base = probe.data()[i];
            probe.data_mut()[i] = base + h;
            let plus = score_from_activations(model, cap.layer_index, &probe, class, kind)?;
            probe.data_mut()[i] = base - h;
            let minus = score_from_activations(model, cap.layer_index, &probe, class, kind)?;
            Ok((plus - 2.0 * y0 + minus) / (h * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    Tensor::from_vec(a.shape(), values)
}

/// `exp(S_c)·(∂S_c/∂A)²`, the exact diagonal for `Y = exp(S_c)` when every
/// layer between the target and the logits is piecewise linear (away from
/// activation-pattern boundaries).
pub fn hessian_diag_closed_form(
    model: &Model,
    cap: &FeatureMapCapture,
    class: usize,
    kind: ScoreKind,
) -> Result<Tensor> {
    if kind != ScoreKind::ExpLogit {
        return Err(Error::FastPathIneligible(format!(
            "score kind is {kind}, the closed form needs exp-logit"
        )));
    }
    let layers = &model.spec().layers;
    let head = &layers[cap.layer_index + 1..layers.len() - 1];
    if let Some((offset, l)) = head.iter().enumerate().find(|(_, l)| !l.is_piecewise_linear()) {
        return Err(Error::FastPathIneligible(format!(
            "layer {} ({l}) is not piecewise linear",
            cap.layer_index + 1 + offset
        )));
    }
    let logit_grad = activation_grad(model, class, cap, ScoreKind::Logit)?;
    let s = model.captured_logits().ok_or(Error::NoForwardCache)?.data()[class];
    let e = s.exp();
    Ok(logit_grad.map(|g| e * g * g))
}

/// Diagonal of `∂²Y/∂A²` at the target layer using the configured estimator.
pub fn hessian_diag(model: &mut Model, input: &Tensor, class: usize, cfg: &CamConfig) -> Result<Tensor> {
    check_class(model, class)?;
    let layer = resolve_layer(model, cfg)?;
    let cap = capture(model, input, layer)?;
    match cfg.hessian {
        HessianEstimator::FiniteDifference => hessian_diag_fd(model, &cap, class, cfg.score_kind, cfg.fd_step),
        HessianEstimator::ClosedForm => hessian_diag_closed_form(model, &cap, class, cfg.score_kind),
    }
}

/// `(1/Z)·Σ_ij m[k, i, j]` per map.
pub fn spatial_mean(maps: &Tensor) -> Vec<f64> {
    let z = maps.shape()[1] * maps.shape()[2];
    maps.data().chunks(z).map(|m| m.iter().sum::<f64>() / z as f64).collect()
}

/// `ReLU(Σ_k α_k A^k)` as a `[U, V]` tensor.
pub fn weighted_map(alpha: &[f64], activations: &Tensor) -> Result<Tensor> {
    let (k, u, v) = match activations.shape() {
        [k, u, v] => (*k, *u, *v),
        s => return Err(Error::shape("weighted_map", format!("expected [K, U, V], got {s:?}"))),
    };
    if alpha.len() != k {
        return Err(Error::shape("weighted_map", format!("{} weights for {k} maps", alpha.len())));
    }
    let mut acc = vec![0.0; u * v];
    for (a, map) in alpha.iter().zip(activations.data().chunks(u * v)) {
        for (s, &x) in acc.iter_mut().zip(map) {
            *s += a * x;
        }
    }
    acc.iter_mut().for_each(|s| *s = s.max(0.0));
    Tensor::from_vec(&[u, v], acc)
}

fn finish(
    model: &Model,
    cap: &FeatureMapCapture,
    alpha: Vec<f64>,
    class: usize,
    method: CamMethod,
) -> Result<(CamWeights, Heatmap)> {
    let raw = weighted_map(&alpha, &cap.activations)?;
    let (_, h, w) = model.spec().input_shape;
    Ok((
        CamWeights {
            alpha,
            class_index: class,
            method,
        },
        Heatmap::from_raw(raw, h, w)?,
    ))
}

pub fn gradcam(model: &mut Model, input: &Tensor, class: usize, cfg: &CamConfig) -> Result<(CamWeights, Heatmap)> {
    check_class(model, class)?;
    let layer = resolve_layer(model, cfg)?;
    let cap = capture(model, input, layer)?;
    let grad = activation_grad(model, class, &cap, cfg.score_kind)?;
    finish(model, &cap, spatial_mean(&grad), class, CamMethod::GradCam)
}

pub fn gradcam_pp(model: &mut Model, input: &Tensor, class: usize, cfg: &CamConfig) -> Result<(CamWeights, Heatmap)> {
    check_class(model, class)?;
    let layer = resolve_layer(model, cfg)?;
    let cap = capture(model, input, layer)?;
    let grad = activation_grad(model, class, &cap, cfg.score_kind)?;
    let hess = match cfg.hessian {
        HessianEstimator::FiniteDifference => hessian_diag_fd(model, &cap, class, cfg.score_kind, cfg.fd_step)?,
        HessianEstimator::ClosedForm => hessian_diag_closed_form(model, &cap, class, cfg.score_kind)?,
    };
    let combined = Tensor::from_vec(
        grad.shape(),
        hess.data().iter().zip(grad.data()).map(|(h, g)| h + 2.0 * g).collect(),
    )?;
    finish(model, &cap, spatial_mean(&combined), class, CamMethod::GradCamPlusPlus)
}
