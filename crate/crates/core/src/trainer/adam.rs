use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments mirroring the parameters, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ModelParams<f32>,
    pub v: ModelParams<f32>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &ModelParams<f32>, config: AdamConfig) -> Self {
        let zeros = params.map(|_, t| Tensor::zeros(t.shape().to_vec()).expect("valid shape"));
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            config,
        }
    }
}

/// Bias-corrected ADAM update; `grads` follow the parameter order.
pub fn adam_step(params: &mut ModelParams<f32>, grads: &[Tensor<f32>], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adam",
            format!(
                "{} gradients and {} moment tensors for {} parameters",
                grads.len(),
                state.m.len(),
                params.len()
            ),
        ));
    }
    for ((p, g), (m, v)) in params
        .tensors()
        .zip(grads)
        .zip(state.m.tensors().zip(state.v.tensors()))
    {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(Error::shape(
                "adam",
                format!("parameter {:?} with gradient {:?}", p.shape(), g.shape()),
            ));
        }
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = (1.0 - (beta1 as f64).powf(state.t as f64)) as f32;
    let c2 = (1.0 - (beta2 as f64).powf(state.t as f64)) as f32;
    for ((p, g), (m, v)) in params
        .tensors_mut()
        .zip(grads)
        .zip(state.m.tensors_mut().zip(state.v.tensors_mut()))
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
