use super::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }
}

/// One bias-corrected Adam update of `params` from the matching `grads`.
pub fn adam_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    let n = params.num_params();
    if grads.num_params() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: grads.num_params(),
        });
    }
    if state.m.len() != n || state.v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: state.m.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let g = grads.flatten();
    let mut k = 0;
    for tensor in params.params_mut() {
        for p in tensor.data_mut() {
            let gi = g[k];
            let m = &mut state.m[k];
            let v = &mut state.v[k];
            *m = config.beta1 * *m + (1.0 - config.beta1) * gi;
            *v = config.beta2 * *v + (1.0 - config.beta2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            k += 1;
        }
    }
    Ok(())
}
