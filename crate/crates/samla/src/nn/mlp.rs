//! Dense multi-layer perceptron with explicit forward caches and a
//! hand-derived backward pass.

use rand::Rng;

use super::{Activation, NnError, ParamTensors};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[out, in]` weight matrix.
    pub weight: Tensor,
    /// Length-`out` bias.
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// A stack of affine layers with per-layer activations. Consecutive layer
/// dimensions must chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NnError> {
        for i in 1..layers.len() {
            if layers[i].in_dim() != layers[i - 1].out_dim() {
                return Err(NnError::Dim {
                    op: "MlpParams::new",
                    layer: i,
                    expected: layers[i - 1].out_dim(),
                    got: layers[i].in_dim(),
                });
            }
        }
        Ok(MlpParams { layers })
    }

    /// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
    pub fn init<R: Rng>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert_eq!(dims.len(), activations.len() + 1, "one activation per layer");
        let layers = activations
            .iter()
            .enumerate()
            .map(|(i, &activation)| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Layer {
                    weight: Tensor::uniform(vec![fan_out, fan_in], -bound, bound, rng),
                    bias: Tensor::uniform(vec![fan_out], -bound, bound, rng),
                    activation,
                }
            })
            .collect();
        MlpParams { layers }
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Tensor::zeros(l.weight.shape().to_vec()),
                    bias: Tensor::zeros(l.bias.shape().to_vec()),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim()).unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }
}

impl ParamTensors for MlpParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v
    }
}

/// Per-layer activations recorded by [`mlp_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (so `inputs[0]` is the network input).
    pub inputs: Vec<Tensor>,
    /// Pre-activation of each layer.
    pub pres: Vec<Tensor>,
}

pub fn mlp_forward(params: &MlpParams, input: &Tensor) -> Result<(Tensor, MlpCache), NnError> {
    let mut cache = MlpCache { inputs: Vec::with_capacity(params.layers.len()), pres: Vec::with_capacity(params.layers.len()) };
    let mut x = input.clone();
    for (li, layer) in params.layers.iter().enumerate() {
        if x.len() != layer.in_dim() || x.shape().len() != 1 {
            return Err(NnError::Dim { op: "mlp_forward", layer: li, expected: layer.in_dim(), got: x.len() });
        }
        let mut pre = layer.weight.matvec(&x)?;
        pre.axpy(1.0, &layer.bias);
        let post = Tensor::vector(pre.data().iter().map(|&v| layer.activation.apply(v)).collect());
        cache.inputs.push(x);
        cache.pres.push(pre);
        x = post;
    }
    Ok((x, cache))
}

/// Backpropagates `grad_output` (dLoss/dOutput) through the network.
/// Returns gradients in `MlpParams` shape plus the gradient wrt the input.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &MlpCache,
    grad_output: &Tensor,
) -> Result<(MlpParams, Tensor), NnError> {
    if cache.inputs.len() != params.layers.len() || cache.pres.len() != params.layers.len() {
        return Err(NnError::CacheMismatch {
            op: "mlp_backward",
            detail: format!("cache has {} layers, params have {}", cache.inputs.len(), params.layers.len()),
        });
    }
    for (li, layer) in params.layers.iter().enumerate() {
        if cache.inputs[li].len() != layer.in_dim() || cache.pres[li].len() != layer.out_dim() {
            return Err(NnError::CacheMismatch {
                op: "mlp_backward",
                detail: format!("layer {} cache dims do not match parameters", li),
            });
        }
    }
    if grad_output.len() != params.out_dim() {
        return Err(NnError::Dim {
            op: "mlp_backward",
            layer: params.layers.len().saturating_sub(1),
            expected: params.out_dim(),
            got: grad_output.len(),
        });
    }

    let mut grads = params.zeros_like();
    let mut grad_post = grad_output.clone();
    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let pre = &cache.pres[li];
        let mut grad_pre = grad_post;
        for i in 0..grad_pre.len() {
            let g = grad_pre.get(i) * layer.activation.grad(pre.get(i));
            grad_pre.set(i, g);
        }
        grads.layers[li].weight.add_outer(&grad_pre, &cache.inputs[li], 1.0);
        grads.layers[li].bias.axpy(1.0, &grad_pre);
        grad_post = layer.weight.matvec_transpose(&grad_pre)?;
    }
    Ok((grads, grad_post))
}
