//! Adam with bias correction, applied across any `ParamTensors` bundle.

use super::{NnError, ParamTensors};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter tensor, plus
/// the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new_like<P: ParamTensors>(params: &P) -> Self {
        let first: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        let second = first.clone();
        AdamState { first, second, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update in place. Gradient tensors must mirror the parameter
/// layout; any non-finite gradient entry aborts before touching params.
pub fn adam_step<P: ParamTensors>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    hyper: AdamHyper,
) -> Result<(), NnError> {
    {
        let ps = params.tensors();
        let gs = grads.tensors();
        if ps.len() != gs.len() || ps.len() != state.first.len() {
            return Err(NnError::CacheMismatch {
                op: "adam_step",
                detail: format!("{} param tensors, {} grad tensors, {} moment slots", ps.len(), gs.len(), state.first.len()),
            });
        }
        for (idx, (p, g)) in ps.iter().zip(gs.iter()).enumerate() {
            if p.shape() != g.shape() || p.shape() != state.first[idx].shape() {
                return Err(NnError::CacheMismatch {
                    op: "adam_step",
                    detail: format!("tensor {} shape mismatch between params, grads, and state", idx),
                });
            }
            if !g.all_finite() {
                return Err(NnError::NonFiniteGrad { tensor_index: idx });
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);

    for (idx, p) in params.tensors_mut().into_iter().enumerate() {
        let g = grads.tensors()[idx].data().to_vec();
        let m = state.first[idx].data_mut();
        let v = state.second[idx].data_mut();
        let pd = p.data_mut();
        for i in 0..g.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            pd[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}
