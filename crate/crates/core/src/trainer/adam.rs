use super::{Result, TrainError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn zeros_like<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|t| Tensor::zeros(t.shape())).collect();
        OptimizerState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update:
/// `m ← β1 m + (1-β1) g`, `v ← β2 v + (1-β2) g²`,
/// `θ ← θ - η m̂ / (sqrt(v̂) + ε)` with `m̂ = m / (1-β1ᵗ)`, `v̂ = v / (1-β2ᵗ)`.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(TrainError::Contract(format!(
            "adam: {} params, {} grads, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, ((p, g), m)) in params.iter().zip(grads).zip(&state.m).enumerate() {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != state.v[i].shape() {
            return Err(TrainError::Contract(format!(
                "adam: tensor {i} has shape {:?} but gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mj / c1;
            let v_hat = vj / c2;
            *pj -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
