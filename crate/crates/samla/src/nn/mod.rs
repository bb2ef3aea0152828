//! Feedforward and recurrent layers with hand-derived gradients.
//!
//! Everything here is deliberately small: dense MLPs with ReLU/identity
//! activations, a single-layer LSTM, and Adam. Gradients are coded by hand
//! and every backward path is checked against [`finite_diff_grad`] in the
//! test suites.

mod adam;
mod lstm;
mod mlp;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use lstm::{lstm_backward, lstm_forward, LstmCache, LstmParams};
pub use mlp::{mlp_backward, mlp_forward, Layer, MlpCache, MlpParams};

use std::fmt;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub enum NnError {
    /// Input/parameter dimensions disagree; `layer` is the offending layer index.
    Dim {
        op: &'static str,
        layer: usize,
        expected: usize,
        got: usize,
    },
    /// A backward pass was handed a cache from a different forward call.
    CacheMismatch { op: &'static str, detail: String },
    /// Gradients contained NaN/Inf; training has diverged.
    NonFiniteGrad { tensor_index: usize },
    /// A probed function returned a non-finite value.
    NonFiniteEval { at_index: usize },
    Tensor(TensorError),
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::Dim { op, layer, expected, got } => {
                write!(f, "{}: layer {} expected input dim {}, got {}", op, layer, expected, got)
            }
            NnError::CacheMismatch { op, detail } => write!(f, "{}: cache mismatch: {}", op, detail),
            NnError::NonFiniteGrad { tensor_index } => {
                write!(f, "non-finite gradient in parameter tensor {}", tensor_index)
            }
            NnError::NonFiniteEval { at_index } => {
                write!(f, "function evaluation returned non-finite value near coordinate {}", at_index)
            }
            NnError::Tensor(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for NnError {}

impl From<TensorError> for NnError {
    fn from(e: TensorError) -> Self {
        NnError::Tensor(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Subgradient; ReLU uses 0 at the kink, matching the MILP encoding.
    #[inline]
    pub fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Flat access to every parameter tensor of a model, in a fixed order.
/// Adam, Polyak averaging and the checkpoint format all walk this view.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
}

/// Central finite differences `(f(x+h e_i) - f(x-h e_i)) / 2h`.
///
/// Test oracle for every hand-derived backward pass in this crate.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor, NnError>
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(h > 0.0, "finite_diff_grad requires h > 0");
    let mut grad = Tensor::zeros(x.shape().to_vec());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.get(i);
        probe.set(i, orig + h);
        let up = f(&probe);
        probe.set(i, orig - h);
        let down = f(&probe);
        probe.set(i, orig);
        if !up.is_finite() || !down.is_finite() {
            return Err(NnError::NonFiniteEval { at_index: i });
        }
        grad.set(i, (up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
