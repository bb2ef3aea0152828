//! Episode mechanics shared by meta-training and evaluation: a task owns an
//! environment instance, the agent-side model of it, and the bookkeeping a
//! policy needs (history, safety flags, model error). Two tasks exist: the
//! damaged-aircraft system identification task and the stimulation-tuning
//! task over subjects.
//!
//! Decision timing is receding-horizon: the policy re-solves every step with
//! the chance constraint aimed at the end of the current batch of `T` steps,
//! while only the first action of the plan is executed. Safety is therefore
//! scored at batch ends ("post-return" steps), where the constraint actually
//! bites.

use crate::acquisition::{encode_context, q_baseline, q_forward, AcqError, AcquisitionParams, History};
use crate::baselines::{
    bo_select, diversity_select, epistemic_select, latin_hypercube, random_select, BaselineError,
    BO_HYPER,
};
use crate::ensemble::{
    linearize, train_ensemble, DynamicsEnsemble, EnsembleConfig, EnsembleError, TransitionSample,
};
use crate::envs::{
    admets_step, admets_subject, aircraft_step, fit_gp, gp_posterior, optimum_error, sample_damage,
    AdmetsSubject, AircraftConfig, AircraftParams, EnvError, GpModel,
};
use crate::policy::{enumerate_policy_1d, solve_policy, PolicyConfig, PolicyError, SafetySpec};
use crate::seed::derive_seed;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[derive(Debug)]
pub enum EngineError {
    /// The chosen policy does not apply to this task (e.g. BO on the
    /// aircraft task, which has no scalar score to fit).
    Unsupported { what: &'static str },
    /// The agent model is missing because `initialize` was never called.
    NotInitialized,
    Env(EnvError),
    Ensemble(EnsembleError),
    Acq(AcqError),
    Policy(PolicyError),
    Baseline(BaselineError),
}

impl std::fmt::Display for EngineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EngineError::Unsupported { what } => write!(f, "unsupported combination: {}", what),
            EngineError::NotInitialized => write!(f, "task used before initialize"),
            EngineError::Env(e) => write!(f, "{}", e),
            EngineError::Ensemble(e) => write!(f, "{}", e),
            EngineError::Acq(e) => write!(f, "{}", e),
            EngineError::Policy(e) => write!(f, "{}", e),
            EngineError::Baseline(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for EngineError {}

impl From<EnvError> for EngineError {
    fn from(e: EnvError) -> Self {
        EngineError::Env(e)
    }
}

impl From<EnsembleError> for EngineError {
    fn from(e: EnsembleError) -> Self {
        EngineError::Ensemble(e)
    }
}

impl From<AcqError> for EngineError {
    fn from(e: AcqError) -> Self {
        EngineError::Acq(e)
    }
}

impl From<PolicyError> for EngineError {
    fn from(e: PolicyError) -> Self {
        EngineError::Policy(e)
    }
}

impl From<BaselineError> for EngineError {
    fn from(e: BaselineError) -> Self {
        EngineError::Baseline(e)
    }
}

/// Which acquisition rule picks the next action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyChoice {
    /// Learned Q with safety constraints (the full solver path).
    Ours,
    /// Largest ensemble disagreement among candidates.
    Epistemic,
    /// Farthest candidate from past actions.
    Diversity,
    /// Safe expected improvement on a fitted GP.
    Bo,
    Random,
}

impl PolicyChoice {
    pub fn parse(s: &str) -> Option<PolicyChoice> {
        match s {
            "ours" => Some(PolicyChoice::Ours),
            "epistemic" => Some(PolicyChoice::Epistemic),
            "diversity" => Some(PolicyChoice::Diversity),
            "bo" => Some(PolicyChoice::Bo),
            "random" => Some(PolicyChoice::Random),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyChoice::Ours => "ours",
            PolicyChoice::Epistemic => "epistemic",
            PolicyChoice::Diversity => "diversity",
            PolicyChoice::Bo => "bo",
            PolicyChoice::Random => "random",
        }
    }

    pub const ALL: [PolicyChoice; 5] = [
        PolicyChoice::Ours,
        PolicyChoice::Epistemic,
        PolicyChoice::Diversity,
        PolicyChoice::Bo,
        PolicyChoice::Random,
    ];
}

/// Outcome flags of one executed step.
#[derive(Debug, Clone, Copy)]
pub struct StepFlags {
    /// Inside the sphere of safety (aircraft) / no side effect (subjects).
    pub safe: bool,
    pub side_effect: bool,
    /// This step closes a batch of `T` steps; safety rates are taken over
    /// these rows only.
    pub batch_end: bool,
}

/// Solver diagnostics for one decision. Baseline selections leave the Q
/// fields empty and report zero nodes.
#[derive(Debug, Clone)]
pub struct SelectDiag {
    pub q_value: Option<f64>,
    pub q_baseline: Option<f64>,
    pub slack_total: Option<f64>,
    pub nodes: u64,
    pub solve_ms: f64,
}

impl SelectDiag {
    fn instant(solve_ms: f64) -> SelectDiag {
        SelectDiag { q_value: None, q_baseline: None, slack_total: None, nodes: 0, solve_ms }
    }
}

/// One environment instance plus the agent's running model of it.
///
/// `select_plan` returns the whole flattened plan (length
/// `action_dim * plan_steps`) so callers can store it for replay; `execute`
/// takes a single action (length `action_dim`), normally the plan's first
/// block. `execute` also refits the agent model, so `model_error` after it
/// reflects the new sample.
pub trait Task {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn plan_steps(&self) -> usize;
    fn history(&self) -> &History;
    fn state(&self) -> &Tensor;
    fn steps_taken(&self) -> usize;
    /// Per-dimension box for a single action step.
    fn action_bounds(&self) -> Vec<(f64, f64)>;
    /// Collects the warm-start samples and fits the first agent model.
    fn initialize(&mut self) -> Result<(), EngineError>;
    /// Current model error e_t in [0, inf); rewards are percent decreases
    /// of this number.
    fn model_error(&self) -> Result<f64, EngineError>;
    fn select_plan(
        &mut self,
        acq: &AcquisitionParams,
        cfg: &PolicyConfig,
    ) -> Result<(Tensor, SelectDiag), EngineError>;
    fn select_baseline(
        &mut self,
        choice: PolicyChoice,
        seed: u64,
    ) -> Result<(Tensor, SelectDiag), EngineError>;
    fn execute(&mut self, action: &Tensor) -> Result<StepFlags, EngineError>;

    /// Box for the full flattened plan.
    fn plan_bounds(&self) -> Vec<(f64, f64)> {
        let one = self.action_bounds();
        let mut out = Vec::with_capacity(one.len() * self.plan_steps());
        for _ in 0..self.plan_steps() {
            out.extend_from_slice(&one);
        }
        out
    }
}

/// Constraint horizon for the next solve: steps left until the current
/// batch of `t` steps closes. Zero-horizon specs stay immediate.
fn remaining_horizon(t: usize, steps_taken: usize) -> usize {
    if t == 0 {
        0
    } else {
        t - (steps_taken % t)
    }
}

fn batch_closed(t: usize, steps_taken: usize) -> bool {
    t <= 1 || steps_taken % t == 0
}

// Seed streams inside a task, all derived from its base seed.
const STREAM_WARM: u64 = 1;
const STREAM_FIT: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_CAND: u64 = 4;
const STREAM_QBAR: u64 = 5;

/// System identification of a damaged aircraft around trim. The agent keeps
/// a bootstrap ensemble of the dynamics; actions are actuator commands; the
/// model error is the ensemble's held-out MSE.
pub struct AircraftTask {
    params: AircraftParams,
    spec: SafetySpec,
    ens_cfg: EnsembleConfig,
    warm_actions: usize,
    warm_scale: f64,
    x: Tensor,
    history: History,
    ensemble: Option<DynamicsEnsemble>,
    base_seed: u64,
    steps_taken: usize,
    events: u64,
}

impl AircraftTask {
    pub fn new(
        params: AircraftParams,
        spec: SafetySpec,
        ens_cfg: EnsembleConfig,
        warm_actions: usize,
        warm_scale: f64,
        base_seed: u64,
    ) -> Result<AircraftTask, EngineError> {
        spec.validate()?;
        if spec.state_dim() != params.state_dim() || spec.action_dim() != params.action_dim() {
            return Err(EngineError::Env(EnvError::Dim {
                what: "aircraft task spec",
                expected: params.state_dim(),
                got: spec.state_dim(),
            }));
        }
        if warm_actions == 0 {
            return Err(EngineError::Env(EnvError::BadConfig { what: "warm_actions must be positive" }));
        }
        if !(warm_scale > 0.0 && warm_scale <= 1.0) {
            return Err(EngineError::Env(EnvError::BadConfig { what: "warm_scale must be in (0, 1]" }));
        }
        let d = params.state_dim();
        let j = params.action_dim();
        Ok(AircraftTask {
            params,
            spec,
            ens_cfg,
            warm_actions,
            warm_scale,
            x: Tensor::zeros(vec![d]),
            history: History::new(d, j),
            ensemble: None,
            base_seed,
            steps_taken: 0,
            events: 0,
        })
    }

    pub fn ensemble(&self) -> Option<&DynamicsEnsemble> {
        self.ensemble.as_ref()
    }

    fn step_env(&mut self, u: &Tensor) -> Result<(), EngineError> {
        let noise_seed = derive_seed(self.base_seed, (STREAM_NOISE << 32) + self.events);
        let next = aircraft_step(&self.params, &self.x, u, noise_seed)?;
        self.history
            .push(TransitionSample::new(self.x.clone(), u.clone(), next.clone()))?;
        self.x = next;
        self.events += 1;
        Ok(())
    }

    fn inside_sphere(&self) -> bool {
        (0..self.spec.state_dim()).all(|d| {
            (self.x.get(d) - self.spec.x_ref.get(d)).abs() <= self.spec.radius.get(d)
        })
    }
}

impl Task for AircraftTask {
    fn state_dim(&self) -> usize {
        self.params.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.params.action_dim()
    }

    fn plan_steps(&self) -> usize {
        self.spec.horizon.max(1)
    }

    fn history(&self) -> &History {
        &self.history
    }

    fn state(&self) -> &Tensor {
        &self.x
    }

    fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    fn action_bounds(&self) -> Vec<(f64, f64)> {
        self.spec.action_box()
    }

    fn initialize(&mut self) -> Result<(), EngineError> {
        // Identification doublets before the episode clock starts: each
        // random command is followed by its negation, so the sweep excites
        // warm_scale of the action box while the trajectory stays near trim.
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.base_seed, STREAM_WARM));
        let mut pending: Option<Tensor> = None;
        for _ in 0..self.warm_actions {
            let u = match pending.take() {
                Some(mut prev) => {
                    prev.scale(-1.0);
                    prev
                }
                None => {
                    let u = Tensor::vector(
                        self.spec
                            .action_box()
                            .iter()
                            .map(|&(lo, hi)| self.warm_scale * rng.gen_range(lo..=hi))
                            .collect(),
                    );
                    pending = Some(u.clone());
                    u
                }
            };
            self.step_env(&u)?;
        }
        let seed = derive_seed(self.base_seed, STREAM_FIT << 32);
        self.ensemble = Some(train_ensemble(self.history.samples(), &self.ens_cfg, seed)?);
        Ok(())
    }

    fn model_error(&self) -> Result<f64, EngineError> {
        let ens = self.ensemble.as_ref().ok_or(EngineError::NotInitialized)?;
        Ok(ens.heldout_mse()?)
    }

    fn select_plan(
        &mut self,
        acq: &AcquisitionParams,
        cfg: &PolicyConfig,
    ) -> Result<(Tensor, SelectDiag), EngineError> {
        let ens = self.ensemble.as_ref().ok_or(EngineError::NotInitialized)?;
        let lin = linearize(ens, &self.x, &Tensor::zeros(vec![self.action_dim()]))?;
        let mut solve_spec = self.spec.clone();
        solve_spec.horizon = remaining_horizon(self.spec.horizon, self.steps_taken);
        let mut solve_cfg = cfg.clone();
        solve_cfg.commit_horizon = true;
        solve_cfg.baseline_seed =
            derive_seed(self.base_seed, (STREAM_QBAR << 32) + self.steps_taken as u64);
        let (plan, diag) = solve_policy(acq, &self.history, &lin, &self.x, &solve_spec, &solve_cfg)?;
        let sd = SelectDiag {
            q_value: Some(diag.q_value),
            q_baseline: Some(diag.q_baseline),
            slack_total: Some(diag.slack_total),
            nodes: diag.nodes,
            solve_ms: diag.solve_ms,
        };
        Ok((plan, sd))
    }

    fn select_baseline(
        &mut self,
        choice: PolicyChoice,
        seed: u64,
    ) -> Result<(Tensor, SelectDiag), EngineError> {
        let start = Instant::now();
        let cand_seed = derive_seed(seed, (STREAM_CAND << 32) + self.steps_taken as u64);
        let candidates = latin_hypercube(&self.action_bounds(), 128, cand_seed);
        let idx = match choice {
            PolicyChoice::Epistemic => {
                let ens = self.ensemble.as_ref().ok_or(EngineError::NotInitialized)?;
                epistemic_select(ens, &self.x, &candidates)?
            }
            PolicyChoice::Diversity => diversity_select(&self.history, &candidates)?,
            PolicyChoice::Random => random_select(&candidates, cand_seed)?,
            PolicyChoice::Bo => {
                return Err(EngineError::Unsupported { what: "bo needs a scalar score task" })
            }
            PolicyChoice::Ours => {
                return Err(EngineError::Unsupported { what: "ours goes through select_plan" })
            }
        };
        let diag = SelectDiag::instant(start.elapsed().as_secs_f64() * 1e3);
        Ok((candidates[idx].clone(), diag))
    }

    fn execute(&mut self, action: &Tensor) -> Result<StepFlags, EngineError> {
        if self.ensemble.is_none() {
            return Err(EngineError::NotInitialized);
        }
        self.step_env(action)?;
        self.steps_taken += 1;
        let seed = derive_seed(self.base_seed, (STREAM_FIT << 32) + self.steps_taken as u64);
        self.ensemble
            .as_mut()
            .expect("checked above")
            .retrain(self.history.samples(), &self.ens_cfg, seed)?;
        let safe = self.inside_sphere();
        Ok(StepFlags {
            safe,
            side_effect: !safe,
            batch_end: batch_closed(self.spec.horizon, self.steps_taken),
        })
    }
}

/// Stimulation tuning on one subject: scalar amplitude in, noisy
/// discrimination score out. The agent fits a GP to its own observations;
/// the model error is how far the GP's amplitude optimum sits from the
/// subject's true optimum, as a fraction of the sweep.
pub struct AdmetsTask {
    subject: AdmetsSubject,
    epsilon: f64,
    warm_observations: usize,
    observations: Vec<(f64, f64)>,
    agent_gp: Option<GpModel>,
    history: History,
    /// Latest observed score as the 1-dim task state; zero before any read.
    state: Tensor,
    spec: SafetySpec,
    base_seed: u64,
    steps_taken: usize,
    events: u64,
}

impl AdmetsTask {
    pub fn new(
        subject: AdmetsSubject,
        epsilon: f64,
        warm_observations: usize,
        base_seed: u64,
    ) -> Result<AdmetsTask, EngineError> {
        if !(epsilon > 0.0 && epsilon <= 0.5) {
            return Err(EngineError::Env(EnvError::BadConfig { what: "epsilon must be in (0, 0.5]" }));
        }
        if warm_observations == 0 {
            return Err(EngineError::Env(EnvError::BadConfig { what: "warm_observations must be positive" }));
        }
        let lo = subject.grid.get(0);
        let hi = subject.grid.get(subject.grid.len() - 1);
        let spec = SafetySpec {
            x_ref: Tensor::vector(vec![0.0]),
            radius: Tensor::vector(vec![1.0]),
            epsilon: Tensor::vector(vec![epsilon]),
            horizon: 0,
            action_lo: Tensor::vector(vec![lo]),
            action_hi: Tensor::vector(vec![hi]),
        };
        Ok(AdmetsTask {
            subject,
            epsilon,
            warm_observations,
            observations: Vec::new(),
            agent_gp: None,
            history: History::new(1, 1),
            state: Tensor::zeros(vec![1]),
            spec,
            base_seed,
            steps_taken: 0,
            events: 0,
        })
    }

    pub fn subject(&self) -> &AdmetsSubject {
        &self.subject
    }

    pub fn observations(&self) -> &[(f64, f64)] {
        &self.observations
    }

    fn observe(&mut self, amplitude: f64) -> Result<bool, EngineError> {
        let seed = derive_seed(self.base_seed, (STREAM_NOISE << 32) + self.events);
        let obs = admets_step(&self.subject, amplitude, seed)?;
        let next = Tensor::vector(vec![obs.score]);
        self.history.push(TransitionSample::new(
            self.state.clone(),
            Tensor::vector(vec![amplitude]),
            next.clone(),
        ))?;
        self.observations.push((amplitude, obs.score));
        self.state = next;
        self.events += 1;
        Ok(obs.side_effect)
    }

    fn refit(&mut self) -> Result<(), EngineError> {
        let xs = Tensor::vector(self.observations.iter().map(|o| o.0).collect());
        let ys = Tensor::vector(self.observations.iter().map(|o| o.1).collect());
        self.agent_gp = Some(fit_gp(&xs, &ys, &BO_HYPER)?);
        Ok(())
    }

    /// Posterior (mean, std) at every grid amplitude.
    fn grid_posterior(&self) -> Result<Vec<(f64, f64)>, EngineError> {
        let gp = self.agent_gp.as_ref().ok_or(EngineError::NotInitialized)?;
        Ok((0..self.subject.grid.len())
            .map(|i| gp_posterior(gp, self.subject.grid.get(i)))
            .collect())
    }

    /// The agent's current best guess of the optimal amplitude: grid argmax
    /// of the posterior mean, lowest index on ties.
    pub fn estimate(&self) -> Result<f64, EngineError> {
        let post = self.grid_posterior()?;
        let mut best = 0;
        for (i, p) in post.iter().enumerate() {
            if p.0 > post[best].0 {
                best = i;
            }
        }
        Ok(self.subject.grid.get(best))
    }
}

impl Task for AdmetsTask {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn plan_steps(&self) -> usize {
        1
    }

    fn history(&self) -> &History {
        &self.history
    }

    fn state(&self) -> &Tensor {
        &self.state
    }

    fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    fn action_bounds(&self) -> Vec<(f64, f64)> {
        vec![(self.spec.action_lo.get(0), self.spec.action_hi.get(0))]
    }

    fn initialize(&mut self) -> Result<(), EngineError> {
        // Repeated baseline reads at zero amplitude: safe by construction
        // and they anchor the GP's noise picture.
        for _ in 0..self.warm_observations {
            self.observe(self.subject.grid.get(0))?;
        }
        self.refit()
    }

    fn model_error(&self) -> Result<f64, EngineError> {
        Ok(optimum_error(&self.subject, self.estimate()?))
    }

    fn select_plan(
        &mut self,
        acq: &AcquisitionParams,
        cfg: &PolicyConfig,
    ) -> Result<(Tensor, SelectDiag), EngineError> {
        let start = Instant::now();
        let gp_safety = self.grid_posterior()?;
        let idx = enumerate_policy_1d(acq, &self.history, &self.subject.grid, &gp_safety, &self.spec, cfg)?;
        let amplitude = self.subject.grid.get(idx);
        let plan = Tensor::vector(vec![amplitude]);
        let z = encode_context(acq, &self.history)?.z;
        let q = q_forward(&acq.q_head, &z, &plan)?;
        let q_bar = q_baseline(
            &acq.q_head,
            &z,
            &self.plan_bounds(),
            cfg.baseline_samples,
            derive_seed(self.base_seed, (STREAM_QBAR << 32) + self.steps_taken as u64),
        )?;
        let diag = SelectDiag {
            q_value: Some(q),
            q_baseline: Some(q_bar),
            slack_total: None,
            nodes: 0,
            solve_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        Ok((plan, diag))
    }

    fn select_baseline(
        &mut self,
        choice: PolicyChoice,
        seed: u64,
    ) -> Result<(Tensor, SelectDiag), EngineError> {
        let start = Instant::now();
        let grid = &self.subject.grid;
        let cand_seed = derive_seed(seed, (STREAM_CAND << 32) + self.steps_taken as u64);
        let idx = match choice {
            PolicyChoice::Bo => bo_select(&self.observations, grid, self.epsilon)?,
            PolicyChoice::Random => random_select(grid.data(), cand_seed)?,
            PolicyChoice::Diversity => {
                let candidates: Vec<Tensor> =
                    grid.data().iter().map(|&a| Tensor::vector(vec![a])).collect();
                diversity_select(&self.history, &candidates)?
            }
            PolicyChoice::Epistemic => {
                return Err(EngineError::Unsupported { what: "epistemic needs a dynamics ensemble" })
            }
            PolicyChoice::Ours => {
                return Err(EngineError::Unsupported { what: "ours goes through select_plan" })
            }
        };
        let diag = SelectDiag::instant(start.elapsed().as_secs_f64() * 1e3);
        Ok((Tensor::vector(vec![grid.get(idx)]), diag))
    }

    fn execute(&mut self, action: &Tensor) -> Result<StepFlags, EngineError> {
        if self.agent_gp.is_none() {
            return Err(EngineError::NotInitialized);
        }
        if action.len() != 1 {
            return Err(EngineError::Env(EnvError::Dim {
                what: "stimulation action",
                expected: 1,
                got: action.len(),
            }));
        }
        let side_effect = self.observe(action.get(0))?;
        self.steps_taken += 1;
        self.refit()?;
        // Every stimulation is its own safety event; there is no return
        // window to wait out.
        Ok(StepFlags { safe: !side_effect, side_effect, batch_end: true })
    }
}

/// Distribution of environment instances a meta-trainer samples from and an
/// evaluation sweeps over.
#[derive(Debug, Clone)]
pub enum TaskDistribution {
    Aircraft(AircraftDistribution),
    Admets(AdmetsDistribution),
}

#[derive(Debug, Clone)]
pub struct AircraftDistribution {
    pub cfg: AircraftConfig,
    pub spec: SafetySpec,
    pub ens_cfg: EnsembleConfig,
    pub warm_actions: usize,
    /// Fraction of the action box the warm-up commands span.
    pub warm_scale: f64,
    /// When set, every draw yields this one instance (noise streams
    /// included), collapsing the distribution to a single environment.
    pub fixed_seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct AdmetsDistribution {
    pub epsilon: f64,
    pub warm_observations: usize,
    /// When set, every draw yields this one subject.
    pub fixed_seed: Option<u64>,
}

impl TaskDistribution {
    /// (state_dim, action_dim) every instance shares.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            TaskDistribution::Aircraft(a) => (a.cfg.state_dim, a.cfg.action_dim),
            TaskDistribution::Admets(_) => (1, 1),
        }
    }

    pub fn plan_steps(&self) -> usize {
        match self {
            TaskDistribution::Aircraft(a) => a.spec.horizon.max(1),
            TaskDistribution::Admets(_) => 1,
        }
    }

    /// Draws one instance. The same seed yields the same instance and the
    /// same noise streams inside it.
    pub fn sample(&self, seed: u64) -> Result<Box<dyn Task>, EngineError> {
        match self {
            TaskDistribution::Aircraft(a) => {
                let seed = a.fixed_seed.unwrap_or(seed);
                let params = sample_damage(seed, &a.cfg)?;
                Ok(Box::new(AircraftTask::new(
                    params,
                    a.spec.clone(),
                    a.ens_cfg.clone(),
                    a.warm_actions,
                    a.warm_scale,
                    derive_seed(seed, 0xD1CE),
                )?))
            }
            TaskDistribution::Admets(d) => {
                let seed = d.fixed_seed.unwrap_or(seed);
                let subject = admets_subject(seed)?;
                Ok(Box::new(AdmetsTask::new(
                    subject,
                    d.epsilon,
                    d.warm_observations,
                    derive_seed(seed, 0xD1CE),
                )?))
            }
        }
    }
}
