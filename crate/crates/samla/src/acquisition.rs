//! The meta-learned acquisition function: an LSTM context encoder producing
//! the embedding Z, a ReLU Q head over (U, Z), the sampled Q baseline, and
//! the DQN-style update machinery. The meta-training loop itself lives in
//! [`crate::acquisition::meta_train`] and drives a task environment through
//! the safe policy solver.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod meta;
pub use meta::{meta_train, MetaConfig, MetaReport};

use crate::ensemble::TransitionSample;
use crate::nn::{
    adam_step, lstm_backward, lstm_forward, mlp_backward, mlp_forward, Activation, AdamHyper,
    AdamState, LstmCache, LstmParams, MlpCache, MlpParams, NnError, ParamTensors,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum AcqError {
    Dim { what: &'static str, expected: usize, got: usize },
    /// Reward inputs must be nonnegative errors.
    NegativeError { which: &'static str },
    DegenerateBounds { index: usize },
    EmptyBatch,
    NonFiniteLoss,
    Nn(NnError),
}

impl fmt::Display for AcqError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AcqError::Dim { what, expected, got } => {
                write!(f, "{}: expected dim {}, got {}", what, expected, got)
            }
            AcqError::NegativeError { which } => {
                write!(f, "compute_reward requires nonnegative errors ({})", which)
            }
            AcqError::DegenerateBounds { index } => {
                write!(f, "action bound {} has lower > upper", index)
            }
            AcqError::EmptyBatch => write!(f, "update batch is empty"),
            AcqError::NonFiniteLoss => write!(f, "Bellman loss is non-finite"),
            AcqError::Nn(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for AcqError {}

impl From<NnError> for AcqError {
    fn from(e: NnError) -> Self {
        AcqError::Nn(e)
    }
}

/// Transitions collected so far in one episode, in arrival order. Dims are
/// fixed at construction so an empty history still knows its feature sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    state_dim: usize,
    action_dim: usize,
    samples: Vec<TransitionSample>,
}

impl History {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        History { state_dim, action_dim, samples: Vec::new() }
    }

    pub fn push(&mut self, sample: TransitionSample) -> Result<(), AcqError> {
        if sample.state.len() != self.state_dim {
            return Err(AcqError::Dim { what: "history state", expected: self.state_dim, got: sample.state.len() });
        }
        if sample.action.len() != self.action_dim {
            return Err(AcqError::Dim { what: "history action", expected: self.action_dim, got: sample.action.len() });
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn samples(&self) -> &[TransitionSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }
}

/// Context embedding Z.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub z: Tensor,
}

/// Encoder (LSTM + one ReLU FC layer) and Q head. One copy holds the online
/// parameters θ, a second the target φ.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionParams {
    pub encoder: LstmParams,
    /// Single ReLU layer mapping concat(final hidden, stats) to z.
    pub fc: MlpParams,
    /// ReLU-ReLU-linear scalar head over concat(U_flat, z).
    pub q_head: MlpParams,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Number of action steps the Q head consumes (flattened).
    pub plan_steps: usize,
}

impl AcquisitionParams {
    pub fn init<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        plan_steps: usize,
        lstm_hidden: usize,
        z_dim: usize,
        q_hidden: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let in_dim = state_dim + action_dim;
        let encoder = LstmParams::init(in_dim, lstm_hidden, rng);
        let fc = MlpParams::init(&[lstm_hidden + 2 * in_dim, z_dim], &[Activation::Relu], rng);
        let q_head = MlpParams::init(
            &[action_dim * plan_steps + z_dim, q_hidden.0, q_hidden.1, 1],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            rng,
        );
        AcquisitionParams { encoder, fc, q_head, state_dim, action_dim, plan_steps }
    }

    pub fn z_dim(&self) -> usize {
        self.fc.out_dim()
    }

    pub fn u_dim(&self) -> usize {
        self.action_dim * self.plan_steps
    }

    pub fn zeros_like(&self) -> Self {
        AcquisitionParams {
            encoder: self.encoder.zeros_like(),
            fc: self.fc.zeros_like(),
            q_head: self.q_head.zeros_like(),
            ..self.clone()
        }
    }
}

impl ParamTensors for AcquisitionParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.fc.tensors());
        v.extend(self.q_head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.fc.tensors_mut());
        v.extend(self.q_head.tensors_mut());
        v
    }
}

/// Per-dimension mean and population std of states then actions:
/// `[mean_x, std_x, mean_u, std_u]`. Empty history gives zeros.
pub fn stats_features(history: &History) -> Tensor {
    let (d, j) = (history.state_dim, history.action_dim);
    let mut out = Tensor::zeros(vec![2 * (d + j)]);
    let n = history.len();
    if n == 0 {
        return out;
    }
    let nf = n as f64;
    let moment = |pick: &dyn Fn(&TransitionSample) -> &Tensor, dim: usize, k: usize| -> (f64, f64) {
        let mean = history.samples.iter().map(|s| pick(s).get(k)).sum::<f64>() / nf;
        let var = history.samples.iter().map(|s| (pick(s).get(k) - mean).powi(2)).sum::<f64>() / nf;
        let _ = dim;
        (mean, var.sqrt())
    };
    for k in 0..d {
        let (m, s) = moment(&|s| &s.state, d, k);
        out.set(k, m);
        out.set(d + k, s);
    }
    for k in 0..j {
        let (m, s) = moment(&|s| &s.action, j, k);
        out.set(2 * d + k, m);
        out.set(2 * d + j + k, s);
    }
    out
}

struct EncodeCache {
    lstm: LstmCache,
    final_h: Tensor,
    feats: Tensor,
    fc: MlpCache,
}

fn encode_context_cached(
    params: &AcquisitionParams,
    history: &History,
) -> Result<(Embedding, EncodeCache), AcqError> {
    if history.state_dim != params.state_dim || history.action_dim != params.action_dim {
        return Err(AcqError::Dim {
            what: "encode_context history",
            expected: params.state_dim + params.action_dim,
            got: history.state_dim + history.action_dim,
        });
    }
    let sequence: Vec<Tensor> = history
        .samples
        .iter()
        .map(|s| Tensor::concat(&[&s.state, &s.action]))
        .collect();
    let (_, final_h, lstm) = lstm_forward(&params.encoder, &sequence)?;
    let feats = stats_features(history);
    let fc_in = Tensor::concat(&[&final_h, &feats]);
    let (z, fc) = mlp_forward(&params.fc, &fc_in)?;
    Ok((Embedding { z }, EncodeCache { lstm, final_h, feats, fc }))
}

/// LSTM over per-step concat(x, u), final hidden state concatenated with
/// [`stats_features`], then one ReLU layer.
pub fn encode_context(params: &AcquisitionParams, history: &History) -> Result<Embedding, AcqError> {
    encode_context_cached(params, history).map(|(e, _)| e)
}

/// Scalar Q value of the flattened action sequence under embedding z.
pub fn q_forward(q_head: &MlpParams, z: &Tensor, u_flat: &Tensor) -> Result<f64, AcqError> {
    if q_head.in_dim() != z.len() + u_flat.len() {
        return Err(AcqError::Dim { what: "q_forward input", expected: q_head.in_dim(), got: z.len() + u_flat.len() });
    }
    let input = Tensor::concat(&[u_flat, z]);
    Ok(mlp_forward(q_head, &input)?.0.get(0))
}

/// Q̄: mean Q over K uniform action samples inside `bounds` (one (lo, hi)
/// pair per flattened action coordinate). Deterministic per seed.
pub fn q_baseline(
    q_head: &MlpParams,
    z: &Tensor,
    bounds: &[(f64, f64)],
    k: usize,
    seed: u64,
) -> Result<f64, AcqError> {
    assert!(k >= 1, "q_baseline needs at least one sample");
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if lo > hi {
            return Err(AcqError::DegenerateBounds { index: i });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..k {
        let u = Tensor::vector(bounds.iter().map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) }).collect());
        acc += q_forward(q_head, z, &u)?;
    }
    Ok(acc / k as f64)
}

/// Percent decrease in model error, clipped to [-1, 1]. A `1e-9` floor on
/// the denominator keeps the zero-error case finite (and exactly 0).
pub fn compute_reward(e_prev: f64, e_curr: f64) -> Result<f64, AcqError> {
    if !(e_prev >= 0.0) || !e_prev.is_finite() {
        return Err(AcqError::NegativeError { which: "e_prev" });
    }
    if !(e_curr >= 0.0) || !e_curr.is_finite() {
        return Err(AcqError::NegativeError { which: "e_curr" });
    }
    Ok(((e_prev - e_curr) / e_prev.max(1e-9)).clamp(-1.0, 1.0))
}

/// One replay tuple: the history snapshot the action was taken under, the
/// (noised) action, the observed reward, and the successor history.
#[derive(Debug, Clone)]
pub struct ReplayItem {
    pub history: History,
    pub action: Tensor,
    pub reward: f64,
    pub next_history: History,
    pub terminal: bool,
}

/// FIFO ring buffer of replay tuples.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<ReplayItem>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { items: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, item: ReplayItem) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<&ReplayItem> {
        assert!(!self.items.is_empty(), "cannot sample from an empty buffer");
        (0..batch).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReplayItem> {
        self.items.iter()
    }
}

/// DQN target y = r + γ max over candidate actions of the target Q.
/// The candidate max stands in for the greedy policy value at the successor
/// context; terminal transitions use the bare reward.
pub fn dqn_target(
    target: &AcquisitionParams,
    next_history: &History,
    candidates: &[Tensor],
    reward: f64,
    gamma: f64,
    terminal: bool,
) -> Result<f64, AcqError> {
    if terminal || gamma == 0.0 {
        return Ok(reward);
    }
    assert!(!candidates.is_empty(), "dqn_target needs at least one candidate");
    let z = encode_context(target, next_history)?.z;
    let mut best = f64::NEG_INFINITY;
    for cand in candidates {
        best = best.max(q_forward(&target.q_head, &z, cand)?);
    }
    Ok(reward + gamma * best)
}

fn accumulate(acc: &mut AcquisitionParams, grads: &AcquisitionParams, scale: f64) {
    for (a, g) in acc.tensors_mut().into_iter().zip(grads.tensors().into_iter()) {
        a.axpy(scale, g);
    }
}

/// Backprop of a scalar loss gradient `dq` through the full stack
/// (Q head, FC encoder layer, LSTM) for one replay item.
fn backward_item(
    params: &AcquisitionParams,
    history: &History,
    u_flat: &Tensor,
    dq: f64,
) -> Result<(f64, AcquisitionParams), AcqError> {
    let (emb, cache) = encode_context_cached(params, history)?;
    let input = Tensor::concat(&[u_flat, &emb.z]);
    let (q_out, q_cache) = mlp_forward(&params.q_head, &input)?;
    let q = q_out.get(0);

    let (q_grads, grad_q_in) = mlp_backward(&params.q_head, &q_cache, &Tensor::vector(vec![dq]))?;
    let grad_z = Tensor::vector(grad_q_in.data()[u_flat.len()..].to_vec());
    let (fc_grads, grad_fc_in) = mlp_backward(&params.fc, &cache.fc, &grad_z)?;
    let grad_h = Tensor::vector(grad_fc_in.data()[..cache.final_h.len()].to_vec());
    let enc_grads = lstm_backward(&params.encoder, &cache.lstm, &grad_h)?;
    let _ = &cache.feats;

    let mut grads = params.zeros_like();
    grads.encoder = enc_grads;
    grads.fc = fc_grads;
    grads.q_head = q_grads;
    Ok((q, grads))
}

/// One Adam step on the mean squared Bellman residual over `batch`.
/// Targets are precomputed by the caller (they depend on the frozen φ).
/// Returns the batch loss.
pub fn dqn_update(
    params: &mut AcquisitionParams,
    batch: &[(&ReplayItem, f64)],
    adam: &mut AdamState,
    hyper: AdamHyper,
) -> Result<f64, AcqError> {
    if batch.is_empty() {
        return Err(AcqError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (item, y) in batch {
        // d/dq of (y - q)^2 / n = 2 (q - y) / n; compute q first to get dq.
        let q0 = {
            let z = encode_context(params, &item.history)?.z;
            q_forward(&params.q_head, &z, &item.action)?
        };
        let dq = 2.0 * (q0 - y) / n;
        let (q, grads) = backward_item(params, &item.history, &item.action, dq)?;
        debug_assert!((q - q0).abs() < 1e-12);
        loss += (y - q).powi(2) / n;
        accumulate(&mut total, &grads, 1.0);
    }
    if !loss.is_finite() {
        return Err(AcqError::NonFiniteLoss);
    }
    adam_step(params, &total, adam, hyper)?;
    Ok(loss)
}

/// Polyak averaging φ ← τθ + (1−τ)φ.
pub fn soft_update(theta: &AcquisitionParams, phi: &mut AcquisitionParams, tau: f64) -> Result<(), AcqError> {
    assert!((0.0..=1.0).contains(&tau), "tau must be in [0, 1]");
    let th = theta.tensors();
    let mut ph = phi.tensors_mut();
    if th.len() != ph.len() {
        return Err(AcqError::Dim { what: "soft_update tensors", expected: th.len(), got: ph.len() });
    }
    for (t, p) in th.into_iter().zip(ph.iter_mut()) {
        if t.shape() != p.shape() {
            return Err(AcqError::Dim { what: "soft_update shape", expected: t.len(), got: p.len() });
        }
        for i in 0..t.len() {
            let v = tau * t.get(i) + (1.0 - tau) * p.get(i);
            p.set(i, v);
        }
    }
    Ok(())
}

/// Uniform candidate actions for the target max, deterministic per seed.
pub fn sample_candidates(bounds: &[(f64, f64)], k: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            Tensor::vector(
                bounds
                    .iter()
                    .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
                    .collect(),
            )
        })
        .collect()
}
