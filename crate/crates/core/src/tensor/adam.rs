use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
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

/// First/second moment buffers, one per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = param_sizes
            .into_iter()
            .map(|n| (vec![0.0; n], vec![0.0; n]))
            .unzip();
        Self {
            t: 0,
            m,
            v,
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
        }
    }

    pub fn for_params<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<f32>>) -> Self {
        Self::new(config, params.into_iter().map(|p| p.numel()))
    }
}

/// One bias-corrected Adam update using each parameter's gradient buffer.
///
/// All gradients are validated before any parameter is touched: on a
/// non-finite gradient the step is aborted and `state` is left unchanged.
pub fn adam_step(params: &mut [&mut Tensor<f32>], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(TensorError::ParamCountMismatch {
            expected: state.m.len(),
            found: params.len(),
        });
    }
    for (i, p) in params.iter().enumerate() {
        let g = p.grad().ok_or(TensorError::MissingGradient { param_index: i })?;
        if g.len() != state.m[i].len() {
            return Err(TensorError::DataLength {
                shape: p.shape().to_vec(),
                expected: state.m[i].len(),
                found: g.len(),
            });
        }
        if let Some(element) = g.iter().position(|x| !x.is_finite()) {
            return Err(TensorError::NonFiniteGradient {
                param_index: i,
                element,
            });
        }
    }

    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = (1.0 - f64::from(b1).powi(state.t as i32)) as f32;
    let bc2 = (1.0 - f64::from(b2).powi(state.t as i32)) as f32;
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let grad = p.grad().expect("validated above").to_vec();
        for (((theta, &g), m), v) in p.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
