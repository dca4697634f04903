use serde::{Deserialize, Serialize};

use super::{Element, Tensor};
use crate::error::{Error, Result};

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
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_update<T: Element>(param: &mut [T], grad: &[T], state: &mut AdamState, cfg: &AdamConfig) {
    debug_assert_eq!(param.len(), grad.len());
    if state.m.len() != param.len() {
        state.m = vec![0.0; param.len()];
        state.v = vec![0.0; param.len()];
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..param.len() {
        let g = grad[i].to_f64().unwrap();
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let p = param[i].to_f64().unwrap() - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        param[i] = T::from_f64_lossy(p);
    }
}

/// Adam over a fixed, ordered parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: Vec::new(),
        }
    }

    /// Applies one update using each parameter's accumulated grad and replaces
    /// it with a fresh leaf (which starts with no grad). Parameters that were
    /// never reached by backward are treated as having zero gradient.
    pub fn step<T: Element>(&mut self, params: Vec<&mut Tensor<T>>) -> Result<()> {
        if self.states.is_empty() {
            self.states = vec![AdamState::default(); params.len()];
        } else if self.states.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} parameters, step got {}",
                self.states.len(),
                params.len()
            )));
        }
        for (param, state) in params.into_iter().zip(&mut self.states) {
            let grad = param.grad().unwrap_or_else(|| vec![T::zero(); param.numel()]);
            let mut data = param.to_vec();
            adam_update(&mut data, &grad, state, &self.config);
            *param = Tensor::parameter(data, param.shape())?;
        }
        Ok(())
    }
}
