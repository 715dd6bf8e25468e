//! Adam with decoupled weight decay and a cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{ModelParams, SLOTS};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// `0.5 · (1 + cos(π · epoch / total)) · base_lr`
pub fn cosine_lr(epoch: usize, total: usize, base_lr: f64) -> f64 {
    let total = total.max(1);
    let t = epoch.min(total) as f64 / total as f64;
    0.5 * (1.0 + (PI * t).cos()) * base_lr
}

/// Moment estimates, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One Adam update of a flat slot. `step` is the 1-based step count after
/// incrementing.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    weight_decay: f64,
    decayed: bool,
) {
    let bc1 = 1.0 - BETA1.powi(step as i32);
    let bc2 = 1.0 - BETA2.powi(step as i32);
    let decay = if decayed { weight_decay } else { 0.0 };
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let old = theta[i];
        theta[i] = old - lr * m_hat / (v_hat.sqrt() + EPSILON) - lr * decay * old;
    }
}

/// Applies one step to every slot. Biases and the fusion weights `alpha`,
/// `beta` are never decayed. Gradients are checked before anything mutates.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.dims() != grads.dims() || params.dims() != state.m.dims() {
        return Err(Error::Config(format!(
            "adam_step: params {:?}, grads {:?}, state {:?}",
            params.dims(),
            grads.dims(),
            state.m.dims()
        )));
    }
    for (slot, info) in grads.slices().iter().zip(SLOTS) {
        if slot.iter().any(|g| !g.is_finite()) {
            return Err(Error::Optimizer { slot: info.name });
        }
    }
    state.step += 1;
    let step = state.step;
    let grads = grads.slices();
    for ((((theta, m), v), g), info) in params
        .slices_mut()
        .into_iter()
        .zip(state.m.slices_mut())
        .zip(state.v.slices_mut())
        .zip(grads)
        .zip(SLOTS)
    {
        adam_update(theta, g, m, v, step, lr, weight_decay, info.decayed);
    }
    Ok(())
}
