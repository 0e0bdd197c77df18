use serde::{Deserialize, Serialize};

use crate::gnn::{GnnError, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// One bias-corrected Adam update over flat slices. `t` is the step index
/// after incrementing (so the first step uses `t = 1`).
pub fn adam_update(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..w.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        w[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Applies one Adam step. A step whose gradient is identically zero is
/// skipped entirely, leaving parameters and state untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), GnnError> {
    let shapes = |p: &ModelParams| p.tensors().iter().map(|t| t.len()).collect::<Vec<_>>();
    let want = shapes(params);
    if shapes(grads) != want || shapes(&state.m) != want || shapes(&state.v) != want {
        return Err(GnnError::Shape("optimizer state does not match parameters".into()));
    }
    if grads.tensors().iter().all(|t| t.iter().all(|&g| g == 0.0)) {
        return Ok(());
    }
    state.t += 1;
    let t = state.t;
    let mut ms = state.m.tensors_mut();
    let mut vs = state.v.tensors_mut();
    for (((w, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(ms.iter_mut()).zip(vs.iter_mut()) {
        adam_update(w, g, m, v, t, cfg);
    }
    Ok(())
}
