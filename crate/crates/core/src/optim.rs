//! Parameter updates for [`Dense`] stacks.

use serde::{Deserialize, Serialize};

use crate::encoder::Dense;
use crate::error::{Result, TgvError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

/// First and second moments, one pair of arrays per layer.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Dense<T>>,
    pub second: Vec<Dense<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Dense<T>], beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            first: params.iter().map(Dense::zeros_like).collect(),
            second: params.iter().map(Dense::zeros_like).collect(),
        }
    }
}

fn check_shapes<T: Scalar>(params: &[Dense<T>], grads: &[Dense<T>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(TgvError::ShapeMismatch(format!("{} layers vs {} gradients", params.len(), grads.len())));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.weight.dim() != g.weight.dim() || p.bias.len() != g.bias.len() {
            return Err(TgvError::ShapeMismatch(format!("layer {k} gradient shape")));
        }
    }
    Ok(())
}

pub fn sgd_step<T: Scalar>(params: &mut [Dense<T>], grads: &[Dense<T>], lr: f64) -> Result<()> {
    check_shapes(params, grads)?;
    let lr = T::of(lr);
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, gv) in p.flat_iter_mut().zip(g.flat_iter()) {
            *pv -= lr * *gv;
        }
    }
    Ok(())
}

/// Bias-corrected Adam update.
pub fn adam_step<T: Scalar>(
    params: &mut [Dense<T>],
    grads: &[Dense<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    check_shapes(params, grads)?;
    check_shapes(params, &state.first)?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::one() / (T::one() - b1.powi(t));
    let c2 = T::one() / (T::one() - b2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(state.eps));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.first).zip(&mut state.second) {
        let slots = p.flat_iter_mut().zip(g.flat_iter()).zip(m.flat_iter_mut()).zip(v.flat_iter_mut());
        for (((pv, &gv), mv), vv) in slots {
            *mv = b1 * *mv + (T::one() - b1) * gv;
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            let m_hat = *mv * c1;
            let v_hat = *vv * c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Optimizer with its state, bound to one parameter stack.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd { lr: f64 },
    Adam { lr: f64, state: AdamState<T> },
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[Dense<T>]) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam { beta1, beta2, eps } => {
                Optimizer::Adam { lr, state: AdamState::new(params, beta1, beta2, eps) }
            }
        }
    }

    pub fn step(&mut self, params: &mut [Dense<T>], grads: &[Dense<T>]) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => sgd_step(params, grads, *lr),
            Optimizer::Adam { lr, state } => adam_step(params, grads, state, *lr),
        }
    }
}
