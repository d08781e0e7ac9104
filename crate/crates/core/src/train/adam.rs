//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{PicsError, Result};
use crate::nn::ParamTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[ParamTensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

fn mismatch(what: &str) -> PicsError {
    PicsError::ShapeMismatch(format!("adam: {what}"))
}

/// One in-place update of `params` from `grads`.
pub fn adam_step(params: &mut [ParamTensor], grads: &[ParamTensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(mismatch("tensor counts differ"));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != p.len() || state.v[i].len() != p.len() {
            return Err(mismatch(&format!("tensor {} has mismatched length", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.values.len() {
            let gj = g.values[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            p.values[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
