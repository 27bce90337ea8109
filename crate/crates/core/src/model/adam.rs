use super::{ModelParams, TrainConfig};

/// First and second moment buffers mirroring the parameters, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        OptState { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// One bias-corrected Adam update over a flat buffer. `t` is the 1-based step.
pub fn adam_update_slice(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &TrainConfig) {
    let correction1 = 1.0 - cfg.beta1.powi(t as i32);
    let correction2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

pub fn adam_update(params: &mut ModelParams, grads: &ModelParams, state: &mut OptState, cfg: &TrainConfig) {
    state.t += 1;
    let t = state.t;
    let grads = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((_, theta), (_, _, g)), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        adam_update_slice(theta, g, m, v, t, cfg);
    }
}
