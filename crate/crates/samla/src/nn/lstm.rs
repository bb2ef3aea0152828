//! Single-layer LSTM with full backpropagation through time, for losses
//! that depend on the final hidden state.

use rand::Rng;

use super::{sigmoid, NnError, ParamTensors};
use crate::tensor::Tensor;

/// Gate weights operate on the concatenation `[x_t; h_{t-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_input: Tensor,
    pub w_forget: Tensor,
    pub w_output: Tensor,
    pub w_cell: Tensor,
    pub b_input: Tensor,
    pub b_forget: Tensor,
    pub b_output: Tensor,
    pub b_cell: Tensor,
}

impl LstmParams {
    /// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights; forget-gate bias
    /// starts at +1 so early training does not wipe the cell state.
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let fan_in = input_dim + hidden_dim;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut gate_w = || Tensor::uniform(vec![hidden_dim, fan_in], -bound, bound, rng);
        let w_input = gate_w();
        let w_forget = gate_w();
        let w_output = gate_w();
        let w_cell = gate_w();
        let gate_b = |rng: &mut R| Tensor::uniform(vec![hidden_dim], -bound, bound, rng);
        LstmParams {
            input_dim,
            hidden_dim,
            w_input,
            w_forget,
            w_output,
            w_cell,
            b_input: gate_b(rng),
            b_forget: Tensor::vector(vec![1.0; hidden_dim]),
            b_output: gate_b(rng),
            b_cell: gate_b(rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let zw = || Tensor::zeros(vec![self.hidden_dim, self.input_dim + self.hidden_dim]);
        let zb = || Tensor::zeros(vec![self.hidden_dim]);
        LstmParams {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w_input: zw(),
            w_forget: zw(),
            w_output: zw(),
            w_cell: zw(),
            b_input: zb(),
            b_forget: zb(),
            b_output: zb(),
            b_cell: zb(),
        }
    }
}

impl ParamTensors for LstmParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.w_input, &self.w_forget, &self.w_output, &self.w_cell,
            &self.b_input, &self.b_forget, &self.b_output, &self.b_cell,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_input, &mut self.w_forget, &mut self.w_output, &mut self.w_cell,
            &mut self.b_input, &mut self.b_forget, &mut self.b_output, &mut self.b_cell,
        ]
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    /// `[x_t; h_{t-1}]`
    concat: Tensor,
    gate_input: Tensor,
    gate_forget: Tensor,
    gate_output: Tensor,
    gate_cell: Tensor,
    cell_prev: Tensor,
    cell_tanh: Tensor,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    input_dim: usize,
    hidden_dim: usize,
    steps: Vec<StepCache>,
}

/// Runs the LSTM over `sequence`; an empty sequence yields a zero final
/// hidden state. Returns all hidden states, the final one, and the cache.
pub fn lstm_forward(
    params: &LstmParams,
    sequence: &[Tensor],
) -> Result<(Vec<Tensor>, Tensor, LstmCache), NnError> {
    let mut cache = LstmCache {
        input_dim: params.input_dim,
        hidden_dim: params.hidden_dim,
        steps: Vec::with_capacity(sequence.len()),
    };
    let mut h = Tensor::zeros(vec![params.hidden_dim]);
    let mut c = Tensor::zeros(vec![params.hidden_dim]);
    let mut hiddens = Vec::with_capacity(sequence.len());

    for (t, x) in sequence.iter().enumerate() {
        if x.len() != params.input_dim || x.shape().len() != 1 {
            return Err(NnError::Dim { op: "lstm_forward", layer: t, expected: params.input_dim, got: x.len() });
        }
        let concat = Tensor::concat(&[x, &h]);
        let act = |w: &Tensor, b: &Tensor| -> Result<Tensor, NnError> {
            let mut pre = w.matvec(&concat)?;
            pre.axpy(1.0, b);
            Ok(pre)
        };
        let gate_input = Tensor::vector(act(&params.w_input, &params.b_input)?.data().iter().map(|&v| sigmoid(v)).collect());
        let gate_forget = Tensor::vector(act(&params.w_forget, &params.b_forget)?.data().iter().map(|&v| sigmoid(v)).collect());
        let gate_output = Tensor::vector(act(&params.w_output, &params.b_output)?.data().iter().map(|&v| sigmoid(v)).collect());
        let gate_cell = Tensor::vector(act(&params.w_cell, &params.b_cell)?.data().iter().map(|&v| v.tanh()).collect());

        let cell_prev = c.clone();
        let mut cell = Tensor::zeros(vec![params.hidden_dim]);
        for k in 0..params.hidden_dim {
            cell.set(k, gate_forget.get(k) * cell_prev.get(k) + gate_input.get(k) * gate_cell.get(k));
        }
        let cell_tanh = Tensor::vector(cell.data().iter().map(|&v| v.tanh()).collect());
        let mut h_next = Tensor::zeros(vec![params.hidden_dim]);
        for k in 0..params.hidden_dim {
            h_next.set(k, gate_output.get(k) * cell_tanh.get(k));
        }

        cache.steps.push(StepCache {
            concat,
            gate_input,
            gate_forget,
            gate_output,
            gate_cell,
            cell_prev,
            cell_tanh,
        });
        h = h_next;
        c = cell;
        hiddens.push(h.clone());
    }

    Ok((hiddens, h, cache))
}

/// Backpropagation through time for a loss that depends on the final
/// hidden state only.
pub fn lstm_backward(
    params: &LstmParams,
    cache: &LstmCache,
    grad_final_h: &Tensor,
) -> Result<LstmParams, NnError> {
    if cache.input_dim != params.input_dim || cache.hidden_dim != params.hidden_dim {
        return Err(NnError::CacheMismatch {
            op: "lstm_backward",
            detail: format!(
                "cache dims ({}, {}) do not match params ({}, {})",
                cache.input_dim, cache.hidden_dim, params.input_dim, params.hidden_dim
            ),
        });
    }
    if grad_final_h.len() != params.hidden_dim {
        return Err(NnError::Dim { op: "lstm_backward", layer: 0, expected: params.hidden_dim, got: grad_final_h.len() });
    }

    let hd = params.hidden_dim;
    let mut grads = params.zeros_like();
    let mut dh = grad_final_h.clone();
    let mut dc = Tensor::zeros(vec![hd]);

    for step in cache.steps.iter().rev() {
        let mut da_input = Tensor::zeros(vec![hd]);
        let mut da_forget = Tensor::zeros(vec![hd]);
        let mut da_output = Tensor::zeros(vec![hd]);
        let mut da_cell = Tensor::zeros(vec![hd]);
        let mut dc_prev = Tensor::zeros(vec![hd]);
        for k in 0..hd {
            let (i, f, o, g) = (step.gate_input.get(k), step.gate_forget.get(k), step.gate_output.get(k), step.gate_cell.get(k));
            let tc = step.cell_tanh.get(k);
            let d_out = dh.get(k) * tc;
            let d_cell = dc.get(k) + dh.get(k) * o * (1.0 - tc * tc);
            let d_i = d_cell * g;
            let d_g = d_cell * i;
            let d_f = d_cell * step.cell_prev.get(k);
            dc_prev.set(k, d_cell * f);
            da_input.set(k, d_i * i * (1.0 - i));
            da_forget.set(k, d_f * f * (1.0 - f));
            da_output.set(k, d_out * o * (1.0 - o));
            da_cell.set(k, d_g * (1.0 - g * g));
        }

        grads.w_input.add_outer(&da_input, &step.concat, 1.0);
        grads.w_forget.add_outer(&da_forget, &step.concat, 1.0);
        grads.w_output.add_outer(&da_output, &step.concat, 1.0);
        grads.w_cell.add_outer(&da_cell, &step.concat, 1.0);
        grads.b_input.axpy(1.0, &da_input);
        grads.b_forget.axpy(1.0, &da_forget);
        grads.b_output.axpy(1.0, &da_output);
        grads.b_cell.axpy(1.0, &da_cell);

        let mut dconcat = params.w_input.matvec_transpose(&da_input)?;
        dconcat.axpy(1.0, &params.w_forget.matvec_transpose(&da_forget)?);
        dconcat.axpy(1.0, &params.w_output.matvec_transpose(&da_output)?);
        dconcat.axpy(1.0, &params.w_cell.matvec_transpose(&da_cell)?);

        dh = Tensor::vector(dconcat.data()[params.input_dim..].to_vec());
        dc = dc_prev;
    }

    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(values: &[&[f64]]) -> Vec<Tensor> {
        values.iter().map(|v| Tensor::vector(v.to_vec())).collect()
    }

    #[test]
    fn empty_sequence_gives_zero_final_h() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = LstmParams::init(3, 4, &mut rng);
        let (hiddens, final_h, _) = lstm_forward(&params, &[]).unwrap();
        assert!(hiddens.is_empty());
        assert_eq!(final_h.data(), &[0.0; 4]);
    }

    #[test]
    fn all_zero_parameters_give_zero_hiddens() {
        let mut params = LstmParams::init(2, 3, &mut ChaCha8Rng::seed_from_u64(2));
        for t in params.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let (hiddens, final_h, _) = lstm_forward(&params, &seq(&[&[1.0, -1.0], &[0.5, 0.5]])).unwrap();
        for h in &hiddens {
            assert_eq!(h.data(), &[0.0; 3]);
        }
        assert_eq!(final_h.data(), &[0.0; 3]);
    }

    #[test]
    fn forward_matches_stepwise_hand_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = LstmParams::init(2, 3, &mut rng);
        let inputs = seq(&[&[0.3, -0.8], &[1.1, 0.2], &[-0.4, 0.9]]);
        let (_, final_h, _) = lstm_forward(&params, &inputs).unwrap();

        // Hand recursion with raw loops, independent of the Tensor helpers.
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut h = [0.0f64; 3];
        let mut c = [0.0f64; 3];
        for x in &inputs {
            let mut z = [0.0f64; 5];
            z[0] = x.get(0);
            z[1] = x.get(1);
            z[2..5].copy_from_slice(&h);
            let mut next_h = [0.0f64; 3];
            let mut next_c = [0.0f64; 3];
            for k in 0..3 {
                let dotb = |w: &Tensor, b: &Tensor| -> f64 {
                    (0..5).map(|j| w.get2(k, j) * z[j]).sum::<f64>() + b.get(k)
                };
                let i = sig(dotb(&params.w_input, &params.b_input));
                let f = sig(dotb(&params.w_forget, &params.b_forget));
                let o = sig(dotb(&params.w_output, &params.b_output));
                let g = dotb(&params.w_cell, &params.b_cell).tanh();
                next_c[k] = f * c[k] + i * g;
                next_h[k] = o * next_c[k].tanh();
            }
            h = next_h;
            c = next_c;
        }
        for k in 0..3 {
            assert!((final_h.get(k) - h[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let params = LstmParams::init(3, 2, &mut ChaCha8Rng::seed_from_u64(4));
        let err = lstm_forward(&params, &seq(&[&[1.0, 2.0]])).unwrap_err();
        assert!(matches!(err, NnError::Dim { .. }));
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_grads() {
        let params = LstmParams::init(2, 3, &mut ChaCha8Rng::seed_from_u64(5));
        let (_, _, cache) = lstm_forward(&params, &seq(&[&[0.1, 0.2], &[0.3, 0.4]])).unwrap();
        let grads = lstm_backward(&params, &cache, &Tensor::zeros(vec![3])).unwrap();
        for t in grads.tensors() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_step_matches_analytic_derivation() {
        // Scalar cell starting from h0 = c0 = 0, so c = i*g and h = o*tanh(c).
        let mut params = LstmParams::init(1, 1, &mut ChaCha8Rng::seed_from_u64(6));
        params.b_forget = Tensor::vector(vec![0.3]);
        let x = 0.7;
        let (_, _, cache) = lstm_forward(&params, &seq(&[&[x]])).unwrap();
        let grads = lstm_backward(&params, &cache, &Tensor::vector(vec![1.0])).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(params.w_input.get2(0, 0) * x + params.b_input.get(0));
        let o = sig(params.w_output.get2(0, 0) * x + params.b_output.get(0));
        let g = (params.w_cell.get2(0, 0) * x + params.b_cell.get(0)).tanh();
        let c = i * g;
        let dh_dc = o * (1.0 - c.tanh().powi(2));
        let db_input = dh_dc * g * i * (1.0 - i);
        let db_cell = dh_dc * i * (1.0 - g * g);
        let db_output = c.tanh() * o * (1.0 - o);

        assert!((grads.b_input.get(0) - db_input).abs() < 1e-12);
        assert!((grads.b_cell.get(0) - db_cell).abs() < 1e-12);
        assert!((grads.b_output.get(0) - db_output).abs() < 1e-12);
        // c_prev = 0 kills the forget-gate path entirely.
        assert_eq!(grads.b_forget.get(0), 0.0);
        assert!((grads.w_input.get2(0, 0) - db_input * x).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences_over_seeds() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let params = LstmParams::init(2, 3, &mut rng);
            let inputs: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(vec![2], -1.0, 1.0, &mut rng)).collect();
            let probe = Tensor::uniform(vec![3], -1.0, 1.0, &mut rng);

            let (_, _, cache) = lstm_forward(&params, &inputs).unwrap();
            let grads = lstm_backward(&params, &cache, &probe).unwrap();

            // Check one weight matrix and one bias per gate against finite
            // differences of the scalar loss <probe, final_h>.
            let names: Vec<usize> = vec![0, 1, 2, 3, 4, 5, 6, 7];
            for idx in names {
                let base = params.tensors()[idx].clone();
                let fd = finite_diff_grad(
                    |t| {
                        let mut p = params.clone();
                        *p.tensors_mut()[idx] = t.clone();
                        let (_, fh, _) = lstm_forward(&p, &inputs).unwrap();
                        fh.dot(&probe)
                    },
                    &base,
                    1e-5,
                )
                .unwrap();
                let got = grads.tensors()[idx];
                let scale = fd.norm_inf().max(1.0);
                for i in 0..fd.len() {
                    assert!(
                        (got.get(i) - fd.get(i)).abs() / scale < 1e-4,
                        "seed {} tensor {} entry {}",
                        seed,
                        idx,
                        i
                    );
                }
            }
        }
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let a = LstmParams::init(2, 3, &mut ChaCha8Rng::seed_from_u64(8));
        let b = LstmParams::init(2, 4, &mut ChaCha8Rng::seed_from_u64(9));
        let (_, _, cache) = lstm_forward(&a, &seq(&[&[0.5, 0.5]])).unwrap();
        let err = lstm_backward(&b, &cache, &Tensor::zeros(vec![4])).unwrap_err();
        assert!(matches!(err, NnError::CacheMismatch { .. }));
    }

    #[test]
    fn hidden_states_stay_inside_unit_box() {
        // o in (0,1) and |tanh| < 1 bound every coordinate.
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            let params = LstmParams::init(3, 5, &mut rng);
            let inputs: Vec<Tensor> = (0..10).map(|_| Tensor::uniform(vec![3], -5.0, 5.0, &mut rng)).collect();
            let (hiddens, _, _) = lstm_forward(&params, &inputs).unwrap();
            for h in hiddens {
                assert!(h.norm_inf() <= 1.0);
            }
        }
    }
}
