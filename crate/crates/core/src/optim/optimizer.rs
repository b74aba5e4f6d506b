use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adagrad { eps: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adagrad() -> Self {
        OptimizerKind::Adagrad { eps: 1e-8 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adagrad { .. } => "adagrad",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    /// `adam`, `adagrad` or `sgd` with the default constants.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::adam()),
            "adagrad" => Ok(Self::adagrad()),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!(
                "unknown optimizer `{other}` (valid: adam, adagrad, sgd)"
            ))),
        }
    }
}

/// Per-parameter accumulators, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum OptState {
    Sgd,
    Adagrad { sum_sq: Vec<Tensor> },
    Adam { m: Vec<Tensor>, v: Vec<Tensor>, t: u64 },
}

impl OptState {
    pub fn new(kind: OptimizerKind, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        match kind {
            OptimizerKind::Sgd => OptState::Sgd,
            OptimizerKind::Adagrad { .. } => OptState::Adagrad { sum_sq: zeros() },
            OptimizerKind::Adam { .. } => OptState::Adam {
                m: zeros(),
                v: zeros(),
                t: 0,
            },
        }
    }

    fn accumulators(&self) -> Vec<&Tensor> {
        match self {
            OptState::Sgd => Vec::new(),
            OptState::Adagrad { sum_sq } => sum_sq.iter().collect(),
            OptState::Adam { m, v, .. } => m.iter().chain(v).collect(),
        }
    }
}

fn check(params: &[Tensor], grads: &[Tensor], state: &OptState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            "optimizer_step",
            format!("{} parameters vs {} gradients", params.len(), grads.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "optimizer_step",
                format!("parameter {i} is {:?} but its gradient is {:?}", p.shape(), g.shape()),
            ));
        }
    }
    let acc = state.accumulators();
    if !acc.is_empty() {
        let per = acc.len() / params.len().max(1);
        if acc.len() != per * params.len() || per == 0 {
            return Err(Error::shape("optimizer_step", "state does not match parameter count"));
        }
        for (i, a) in acc.iter().enumerate() {
            if a.shape() != params[i % params.len()].shape() {
                return Err(Error::shape(
                    "optimizer_step",
                    format!("state tensor {i} is {:?}", a.shape()),
                ));
            }
        }
    }
    Ok(())
}

/// One update of `params` in place.
///
/// * sgd: `p −= lr·g`
/// * adagrad: `s += g²; p −= lr·g/(√s + ε)`
/// * adam: `t += 1; m = β₁m + (1−β₁)g; v = β₂v + (1−β₂)g²;
///   p −= lr·m̂/(√v̂ + ε)` with `m̂ = m/(1−β₁ᵗ)`, `v̂ = v/(1−β₂ᵗ)`
pub fn optimizer_step(
    kind: OptimizerKind,
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptState,
    lr: f64,
) -> Result<()> {
    check(params, grads, state)?;
    match (kind, state) {
        (OptimizerKind::Sgd, OptState::Sgd) => {
            for (p, g) in params.iter_mut().zip(grads) {
                for (p, &g) in p.data_mut().iter_mut().zip(g.data()) {
                    *p -= lr * g;
                }
            }
        }
        (OptimizerKind::Adagrad { eps }, OptState::Adagrad { sum_sq }) => {
            for ((p, g), s) in params.iter_mut().zip(grads).zip(sum_sq.iter_mut()) {
                for ((p, &g), s) in p.data_mut().iter_mut().zip(g.data()).zip(s.data_mut()) {
                    *s += g * g;
                    *p -= lr * g / (s.sqrt() + eps);
                }
            }
        }
        (OptimizerKind::Adam { beta1, beta2, eps }, OptState::Adam { m, v, t }) => {
            *t += 1;
            let exp = i32::try_from(*t).unwrap_or(i32::MAX);
            let (c1, c2) = (1.0 - beta1.powi(exp), 1.0 - beta2.powi(exp));
            for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                let lanes = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
                for (((p, &g), m), v) in lanes {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
        (kind, _) => {
            return Err(Error::shape(
                "optimizer_step",
                format!("state was not created for {kind}"),
            ))
        }
    }
    Ok(())
}
