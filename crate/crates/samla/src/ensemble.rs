//! Online dynamics model: an ensemble of MLPs trained on bootstrap
//! resamples. Provides point predictions, a local linearization, and the
//! member-spread matrices that feed the chance constraints.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{adam_step, mlp_backward, mlp_forward, Activation, AdamHyper, AdamState, MlpParams, NnError};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleError {
    EmptyData,
    TooFewSamples { got: usize, need: usize },
    DimMismatch { what: &'static str, expected: usize, got: usize },
    /// Training loss went non-finite.
    Diverged { member: usize, epoch: usize },
    NonFiniteJacobian,
    Nn(NnError),
}

impl fmt::Display for EnsembleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnsembleError::EmptyData => write!(f, "transition data is empty"),
            EnsembleError::TooFewSamples { got, need } => {
                write!(f, "need at least {} transition samples, got {}", need, got)
            }
            EnsembleError::DimMismatch { what, expected, got } => {
                write!(f, "{}: expected dim {}, got {}", what, expected, got)
            }
            EnsembleError::Diverged { member, epoch } => {
                write!(f, "member {} diverged at epoch {} (non-finite loss)", member, epoch)
            }
            EnsembleError::NonFiniteJacobian => write!(f, "finite-difference Jacobian is non-finite"),
            EnsembleError::Nn(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for EnsembleError {}

impl From<NnError> for EnsembleError {
    fn from(e: NnError) -> Self {
        EnsembleError::Nn(e)
    }
}

impl From<crate::tensor::TensorError> for EnsembleError {
    fn from(e: crate::tensor::TensorError) -> Self {
        EnsembleError::Nn(NnError::Tensor(e))
    }
}

/// One observed transition (x, u) -> x'.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub state: Tensor,
    pub action: Tensor,
    pub next_state: Tensor,
}

impl TransitionSample {
    pub fn new(state: Tensor, action: Tensor, next_state: Tensor) -> Self {
        assert_eq!(state.len(), next_state.len(), "state and next_state dims must match");
        TransitionSample { state, action, next_state }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    /// Ensemble size B.
    pub members: usize,
    /// Hidden layer widths; every hidden layer is ReLU, the output linear.
    pub hidden: Vec<usize>,
    /// Full-batch Adam steps for a from-scratch fit.
    pub epochs: usize,
    /// Steps when warm-starting from previous weights.
    pub warm_epochs: usize,
    pub lr: f64,
    pub min_samples: usize,
    /// Warm-start retraining keeps member weights and only resets Adam.
    pub warm_start: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            members: 5,
            hidden: vec![32],
            epochs: 400,
            warm_epochs: 80,
            lr: 0.01,
            min_samples: 5,
            warm_start: true,
        }
    }
}

/// Bootstrap ensemble over transitions. Every fifth sample (by arrival
/// index) is held out for evaluation, so the split is stable as data grows
/// and rewards are measured on data no member trained on.
#[derive(Debug, Clone)]
pub struct DynamicsEnsemble {
    pub members: Vec<MlpParams>,
    pub eval_set: Vec<TransitionSample>,
    pub state_dim: usize,
    pub action_dim: usize,
}

/// Local linearization x' ~ A_bar x + B_bar u + c_bar, with per-entry
/// member spread (population std of member Jacobian entries).
#[derive(Debug, Clone)]
pub struct Linearization {
    pub a_bar: Tensor,
    pub b_bar: Tensor,
    pub c_bar: Tensor,
    pub sigma_state: Tensor,
    pub sigma_action: Tensor,
}

/// Sample-with-replacement of the same size, deterministic per seed.
pub fn bootstrap_resample(data: &[TransitionSample], seed: u64) -> Result<Vec<TransitionSample>, EnsembleError> {
    if data.is_empty() {
        return Err(EnsembleError::EmptyData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..data.len()).map(|_| data[rng.gen_range(0..data.len())].clone()).collect())
}

fn split_eval(data: &[TransitionSample]) -> (Vec<TransitionSample>, Vec<TransitionSample>) {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (i, s) in data.iter().enumerate() {
        if i % 5 == 0 {
            eval.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    (train, eval)
}

fn member_input(x: &Tensor, u: &Tensor) -> Tensor {
    Tensor::concat(&[x, u])
}

/// Full-batch Adam on mean squared next-state error.
fn fit_member(
    member: &mut MlpParams,
    train: &[TransitionSample],
    epochs: usize,
    lr: f64,
    member_idx: usize,
) -> Result<(), EnsembleError> {
    let d = member.out_dim();
    let n = train.len();
    let mut adam = AdamState::new_like(member);
    let hyper = AdamHyper::with_lr(lr);
    let scale = 2.0 / (n * d) as f64;
    for epoch in 0..epochs {
        let mut grads = member.zeros_like();
        let mut loss = 0.0;
        for s in train {
            let input = member_input(&s.state, &s.action);
            let (pred, cache) = mlp_forward(member, &input)?;
            let mut err = pred;
            err.axpy(-1.0, &s.next_state);
            loss += err.dot(&err);
            err.scale(scale);
            let (g, _) = mlp_backward(member, &cache, &err)?;
            for (acc, gt) in grads.layers.iter_mut().zip(g.layers.iter()) {
                acc.weight.axpy(1.0, &gt.weight);
                acc.bias.axpy(1.0, &gt.bias);
            }
        }
        if !loss.is_finite() {
            return Err(EnsembleError::Diverged { member: member_idx, epoch });
        }
        adam_step(member, &grads, &mut adam, hyper)?;
    }
    Ok(())
}

fn check_dims(data: &[TransitionSample]) -> Result<(usize, usize), EnsembleError> {
    let d = data[0].state.len();
    let j = data[0].action.len();
    for s in data {
        if s.state.len() != d || s.next_state.len() != d {
            return Err(EnsembleError::DimMismatch { what: "state", expected: d, got: s.state.len().max(s.next_state.len()) });
        }
        if s.action.len() != j {
            return Err(EnsembleError::DimMismatch { what: "action", expected: j, got: s.action.len() });
        }
    }
    Ok((d, j))
}

/// Trains a fresh ensemble: eval split first, then each member fits its own
/// bootstrap resample of the training part.
pub fn train_ensemble(
    data: &[TransitionSample],
    config: &EnsembleConfig,
    seed: u64,
) -> Result<DynamicsEnsemble, EnsembleError> {
    if data.is_empty() {
        return Err(EnsembleError::EmptyData);
    }
    let need = config.min_samples.max(2);
    if data.len() < need {
        return Err(EnsembleError::TooFewSamples { got: data.len(), need });
    }
    let (d, j) = check_dims(data)?;
    let (train, eval) = split_eval(data);

    let mut dims = vec![d + j];
    dims.extend_from_slice(&config.hidden);
    dims.push(d);
    let mut acts = vec![Activation::Relu; config.hidden.len()];
    acts.push(Activation::Identity);

    let mut members = Vec::with_capacity(config.members);
    for b in 0..config.members {
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1_000 + b as u64));
        let mut member = MlpParams::init(&dims, &acts, &mut init_rng);
        let resample = bootstrap_resample(&train, derive_seed(seed, b as u64))?;
        fit_member(&mut member, &resample, config.epochs, config.lr, b)?;
        members.push(member);
    }
    Ok(DynamicsEnsemble { members, eval_set: eval, state_dim: d, action_dim: j })
}

impl DynamicsEnsemble {
    /// Refits on grown data. With `warm_start` the members keep their
    /// weights (fresh Adam, fewer epochs); otherwise trains from scratch.
    pub fn retrain(
        &mut self,
        data: &[TransitionSample],
        config: &EnsembleConfig,
        seed: u64,
    ) -> Result<(), EnsembleError> {
        if !config.warm_start {
            *self = train_ensemble(data, config, seed)?;
            return Ok(());
        }
        if data.is_empty() {
            return Err(EnsembleError::EmptyData);
        }
        let (d, j) = check_dims(data)?;
        if d != self.state_dim || j != self.action_dim {
            return Err(EnsembleError::DimMismatch { what: "retrain data", expected: self.state_dim, got: d });
        }
        let (train, eval) = split_eval(data);
        if train.is_empty() {
            return Err(EnsembleError::TooFewSamples { got: data.len(), need: 2 });
        }
        for (b, member) in self.members.iter_mut().enumerate() {
            let resample = bootstrap_resample(&train, derive_seed(seed, b as u64))?;
            fit_member(member, &resample, config.warm_epochs, config.lr, b)?;
        }
        self.eval_set = eval;
        Ok(())
    }

    fn member_predict(&self, b: usize, x: &Tensor, u: &Tensor) -> Result<Tensor, EnsembleError> {
        Ok(mlp_forward(&self.members[b], &member_input(x, u))?.0)
    }

    /// Mean of member predictions.
    pub fn predict_mean(&self, x: &Tensor, u: &Tensor) -> Result<Tensor, EnsembleError> {
        if x.len() != self.state_dim {
            return Err(EnsembleError::DimMismatch { what: "state", expected: self.state_dim, got: x.len() });
        }
        if u.len() != self.action_dim {
            return Err(EnsembleError::DimMismatch { what: "action", expected: self.action_dim, got: u.len() });
        }
        let mut acc = Tensor::zeros(vec![self.state_dim]);
        for b in 0..self.members.len() {
            acc.axpy(1.0, &self.member_predict(b, x, u)?);
        }
        acc.scale(1.0 / self.members.len() as f64);
        Ok(acc)
    }

    /// Mean over eval samples of the squared L2 error of `predict_mean`,
    /// averaged per state dimension.
    pub fn heldout_mse(&self) -> Result<f64, EnsembleError> {
        heldout_mse(self, &self.eval_set)
    }
}

pub fn heldout_mse(ens: &DynamicsEnsemble, eval_set: &[TransitionSample]) -> Result<f64, EnsembleError> {
    if eval_set.is_empty() {
        return Err(EnsembleError::EmptyData);
    }
    let mut total = 0.0;
    for s in eval_set {
        let pred = ens.predict_mean(&s.state, &s.action)?;
        let mut err = pred;
        err.axpy(-1.0, &s.next_state);
        total += err.dot(&err);
    }
    Ok(total / (eval_set.len() * ens.state_dim) as f64)
}

const JAC_H: f64 = 1e-4;

/// Central-difference Jacobians of `f` at (x0, u0) wrt state and action.
fn jacobians<F>(mut f: F, x0: &Tensor, u0: &Tensor, d: usize) -> Result<(Tensor, Tensor), EnsembleError>
where
    F: FnMut(&Tensor, &Tensor) -> Result<Tensor, EnsembleError>,
{
    let mut a = Tensor::zeros(vec![d, x0.len()]);
    let mut b = Tensor::zeros(vec![d, u0.len()]);
    let mut x = x0.clone();
    for c in 0..x0.len() {
        let orig = x.get(c);
        x.set(c, orig + JAC_H);
        let up = f(&x, u0)?;
        x.set(c, orig - JAC_H);
        let down = f(&x, u0)?;
        x.set(c, orig);
        for r in 0..d {
            let v = (up.get(r) - down.get(r)) / (2.0 * JAC_H);
            if !v.is_finite() {
                return Err(EnsembleError::NonFiniteJacobian);
            }
            a.set2(r, c, v);
        }
    }
    let mut u = u0.clone();
    for c in 0..u0.len() {
        let orig = u.get(c);
        u.set(c, orig + JAC_H);
        let up = f(x0, &u)?;
        u.set(c, orig - JAC_H);
        let down = f(x0, &u)?;
        u.set(c, orig);
        for r in 0..d {
            let v = (up.get(r) - down.get(r)) / (2.0 * JAC_H);
            if !v.is_finite() {
                return Err(EnsembleError::NonFiniteJacobian);
            }
            b.set2(r, c, v);
        }
    }
    Ok((a, b))
}

/// Point linearization of the ensemble mean at (x0, u0), with sigma as the
/// population std of the per-member Jacobian entries.
pub fn linearize(ens: &DynamicsEnsemble, x0: &Tensor, u0: &Tensor) -> Result<Linearization, EnsembleError> {
    let d = ens.state_dim;
    let (a_bar, b_bar) = jacobians(|x, u| ens.predict_mean(x, u), x0, u0, d)?;

    let nb = ens.members.len();
    let mut member_a = Vec::with_capacity(nb);
    let mut member_b = Vec::with_capacity(nb);
    for m in 0..nb {
        let (a, b) = jacobians(|x, u| ens.member_predict(m, x, u), x0, u0, d)?;
        member_a.push(a);
        member_b.push(b);
    }
    let pop_std = |mats: &[Tensor], r: usize, c: usize| -> f64 {
        let mean = mats.iter().map(|m| m.get2(r, c)).sum::<f64>() / nb as f64;
        let var = mats.iter().map(|m| (m.get2(r, c) - mean).powi(2)).sum::<f64>() / nb as f64;
        var.sqrt()
    };
    let mut sigma_state = Tensor::zeros(vec![d, ens.state_dim]);
    let mut sigma_action = Tensor::zeros(vec![d, ens.action_dim]);
    for r in 0..d {
        for c in 0..ens.state_dim {
            sigma_state.set2(r, c, pop_std(&member_a, r, c));
        }
        for c in 0..ens.action_dim {
            sigma_action.set2(r, c, pop_std(&member_b, r, c));
        }
    }

    let mean0 = ens.predict_mean(x0, u0)?;
    let mut c_bar = mean0;
    c_bar.axpy(-1.0, &a_bar.matvec(x0)?);
    c_bar.axpy(-1.0, &b_bar.matvec(u0)?);

    Ok(Linearization { a_bar, b_bar, c_bar, sigma_state, sigma_action })
}
