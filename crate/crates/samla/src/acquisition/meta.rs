//! Meta-training of the acquisition function across a distribution of
//! environments. Each episode samples a fresh instance, acts with the safe
//! policy solver plus decaying Gaussian exploration noise, rewards percent
//! decreases in the agent's model error, and applies one DQN update per
//! step with a Polyak-averaged target network. The target's greedy value is
//! a max over sampled candidate plans, never another solver call.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    compute_reward, dqn_target, dqn_update, sample_candidates, soft_update, AcquisitionParams,
    ReplayBuffer, ReplayItem,
};
use crate::engine::{EngineError, TaskDistribution};
use crate::nn::{AdamHyper, AdamState};
use crate::policy::{PolicyConfig, PolicyError};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct MetaConfig {
    /// Episodes N.
    pub episodes: usize,
    /// Decision steps M per episode.
    pub steps: usize,
    pub gamma: f64,
    /// Polyak rate for the target network.
    pub tau: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Candidate plans in the target max.
    pub target_candidates: usize,
    /// Exploration noise, as a fraction of the action range, decaying
    /// linearly from `noise_hi` (first episode) to `noise_lo` (last).
    pub noise_hi: f64,
    pub noise_lo: f64,
    pub lr: f64,
    pub lambda1: f64,
    pub slack_penalty: f64,
    pub node_limit: u64,
    pub lstm_hidden: usize,
    pub z_dim: usize,
    pub q_hidden: (usize, usize),
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            episodes: 500,
            steps: 20,
            gamma: 0.9,
            tau: 0.01,
            buffer_capacity: 4096,
            batch_size: 16,
            target_candidates: 64,
            noise_hi: 0.3,
            noise_lo: 0.05,
            lr: 1e-3,
            lambda1: 1.0,
            slack_penalty: 100.0,
            node_limit: 100_000,
            lstm_hidden: 8,
            z_dim: 6,
            q_hidden: (12, 12),
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |what: &'static str| {
            Err(EngineError::Policy(PolicyError::BadSpec { what }))
        };
        if self.episodes == 0 || self.steps == 0 {
            return bad("episodes and steps must be positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("buffer must hold at least one batch");
        }
        if self.target_candidates == 0 {
            return bad("target_candidates must be positive");
        }
        if !(self.noise_lo >= 0.0 && self.noise_hi >= self.noise_lo) {
            return bad("noise range must satisfy 0 <= lo <= hi");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.lambda1 < 0.0 || self.slack_penalty < 0.0 {
            return bad("lambda1 and slack_penalty must be nonnegative");
        }
        if self.lstm_hidden == 0 || self.z_dim == 0 || self.q_hidden.0 == 0 || self.q_hidden.1 == 0
        {
            return bad("network widths must be positive");
        }
        Ok(())
    }

    fn policy_config(&self) -> PolicyConfig {
        let mut cfg = PolicyConfig::new(self.lambda1, self.slack_penalty);
        cfg.node_limit = self.node_limit;
        cfg
    }
}

/// What meta-training produced, plus enough trace to judge it.
#[derive(Debug, Clone)]
pub struct MetaReport {
    /// Online parameters θ after the last episode.
    pub params: AcquisitionParams,
    /// Episodes abandoned because the policy solver found no feasible
    /// point at any slack relaxation.
    pub skipped_episodes: usize,
    /// Summed reward of each completed episode.
    pub episode_rewards: Vec<f64>,
    /// Bellman loss of every parameter update, in order.
    pub losses: Vec<f64>,
    /// Replay items held when training ended.
    pub replay_len: usize,
}

// Seed streams relative to the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_EXPLORE: u64 = 2;
const STREAM_REPLAY: u64 = 3;
const STREAM_TARGET: u64 = 4;

fn noise_scale(cfg: &MetaConfig, episode: usize) -> f64 {
    if cfg.episodes <= 1 {
        return cfg.noise_hi;
    }
    let frac = episode as f64 / (cfg.episodes - 1) as f64;
    cfg.noise_hi + (cfg.noise_lo - cfg.noise_hi) * frac
}

/// Infeasibility is an episode-level skip, not a run failure; anything
/// else aborts the run.
fn is_infeasible(err: &EngineError) -> bool {
    matches!(err, EngineError::Policy(PolicyError::Internal { .. }))
}

/// Algorithm: for each of N episodes, draw an environment, warm-start its
/// agent model, then act M times with exploration noise on top of the safe
/// policy, pushing (history, plan, reward, history') into replay and taking
/// one Bellman step (plus a Polyak target update) per action.
///
/// Deterministic per (distribution, config, seed).
pub fn meta_train(
    dist: &TaskDistribution,
    cfg: &MetaConfig,
    seed: u64,
) -> Result<MetaReport, EngineError> {
    cfg.validate()?;
    let (state_dim, action_dim) = dist.dims();
    let plan_steps = dist.plan_steps();

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_INIT));
    let mut theta = AcquisitionParams::init(
        state_dim,
        action_dim,
        plan_steps,
        cfg.lstm_hidden,
        cfg.z_dim,
        cfg.q_hidden,
        &mut init_rng,
    );
    let mut phi = theta.clone();
    let mut adam = AdamState::new_like(&theta);
    let hyper = AdamHyper::with_lr(cfg.lr);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut replay_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_REPLAY));

    let pcfg = cfg.policy_config();
    let mut skipped = 0usize;
    let mut episode_rewards = Vec::new();
    let mut losses = Vec::new();
    let mut updates = 0u64;

    for ep in 0..cfg.episodes {
        let env_seed = derive_seed(seed, (STREAM_ENV << 32) + ep as u64);
        let mut task = dist.sample(env_seed)?;
        task.initialize()?;
        let mut explore_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, (STREAM_EXPLORE << 32) + ep as u64));
        let sigma = noise_scale(cfg, ep);
        let plan_bounds = task.plan_bounds();

        let mut e_prev = task.model_error()?;
        let mut ep_reward = 0.0;
        let mut abandoned = false;

        for step in 0..cfg.steps {
            let history_before = task.history().clone();
            let plan = match task.select_plan(&theta, &pcfg) {
                Ok((plan, _)) => plan,
                Err(e) if is_infeasible(&e) => {
                    skipped += 1;
                    abandoned = true;
                    break;
                }
                Err(e) => return Err(e),
            };

            // Gaussian exploration on every plan entry, clipped to the box.
            let mut noised = plan.clone();
            for (i, &(lo, hi)) in plan_bounds.iter().enumerate() {
                let width = hi - lo;
                let draw = standard_normal(&mut explore_rng);
                let v = (noised.get(i) + sigma * width * draw).clamp(lo, hi);
                noised.set(i, v);
            }
            let first = Tensor::vector(noised.data()[..action_dim].to_vec());
            task.execute(&first)?;

            let e_curr = task.model_error()?;
            let reward = compute_reward(e_prev, e_curr)?;
            e_prev = e_curr;
            ep_reward += reward;

            buffer.push(ReplayItem {
                history: history_before,
                action: noised,
                reward,
                next_history: task.history().clone(),
                terminal: step + 1 == cfg.steps,
            });

            if buffer.len() >= cfg.batch_size {
                let cand_seed = derive_seed(seed, (STREAM_TARGET << 32) + updates);
                let candidates =
                    sample_candidates(&plan_bounds, cfg.target_candidates, cand_seed);
                let items = buffer.sample(cfg.batch_size, &mut replay_rng);
                let mut batch = Vec::with_capacity(items.len());
                for item in items {
                    let y = dqn_target(
                        &phi,
                        &item.next_history,
                        &candidates,
                        item.reward,
                        cfg.gamma,
                        item.terminal,
                    )?;
                    batch.push((item, y));
                }
                let loss = dqn_update(&mut theta, &batch, &mut adam, hyper)?;
                losses.push(loss);
                soft_update(&theta, &mut phi, cfg.tau)?;
                updates += 1;
            }
        }

        if !abandoned {
            episode_rewards.push(ep_reward);
        }
    }

    Ok(MetaReport {
        params: theta,
        skipped_episodes: skipped,
        episode_rewards,
        losses,
        replay_len: buffer.len(),
    })
}

/// Box-Muller draw; mirrors the environments' sampler so exploration noise
/// shares no stream with them.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::AdmetsDistribution;
    use crate::nn::ParamTensors;

    fn admets_dist(fixed: Option<u64>) -> TaskDistribution {
        TaskDistribution::Admets(AdmetsDistribution {
            epsilon: 0.1,
            warm_observations: 2,
            fixed_seed: fixed,
        })
    }

    fn tiny_cfg() -> MetaConfig {
        MetaConfig {
            episodes: 1,
            steps: 1,
            batch_size: 4,
            buffer_capacity: 64,
            target_candidates: 8,
            lstm_hidden: 4,
            z_dim: 3,
            q_hidden: (6, 6),
            ..MetaConfig::default()
        }
    }

    #[test]
    fn smoke_single_episode_single_step_fills_the_buffer() {
        let report = meta_train(&admets_dist(None), &tiny_cfg(), 3).unwrap();
        assert_eq!(report.replay_len, 1);
        assert_eq!(report.episode_rewards.len(), 1);
        assert_eq!(report.skipped_episodes, 0);
        // One transition cannot fill a batch of four, so no update ran.
        assert!(report.losses.is_empty());
    }

    #[test]
    fn same_seed_reproduces_parameters_bitwise() {
        let cfg = MetaConfig { episodes: 3, steps: 2, ..tiny_cfg() };
        let a = meta_train(&admets_dist(None), &cfg, 11).unwrap();
        let b = meta_train(&admets_dist(None), &cfg, 11).unwrap();
        for (ta, tb) in a.params.tensors().iter().zip(b.params.tensors().iter()) {
            assert_eq!(ta.data(), tb.data());
        }
        assert_eq!(a.episode_rewards, b.episode_rewards);
        assert_eq!(a.losses, b.losses);
        let c = meta_train(&admets_dist(None), &cfg, 12).unwrap();
        let differs = a
            .params
            .tensors()
            .iter()
            .zip(c.params.tensors().iter())
            .any(|(ta, tc)| ta.data() != tc.data());
        assert!(differs, "different seeds should land on different weights");
    }

    #[test]
    fn gamma_zero_regresses_immediate_reward_on_a_fixed_subject() {
        // With gamma = 0 the Bellman target is the reward itself, so on one
        // frozen subject the Q head is doing plain regression and the loss
        // must come down.
        let cfg = MetaConfig {
            episodes: 400,
            steps: 1,
            gamma: 0.0,
            batch_size: 16,
            buffer_capacity: 1024,
            lr: 1e-2,
            q_hidden: (8, 8),
            ..tiny_cfg()
        };
        let report = meta_train(&admets_dist(Some(4)), &cfg, 7).unwrap();
        assert!(report.losses.len() > 100);
        let tail = &report.losses[report.losses.len() - 20..];
        let mean_tail: f64 = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mean_tail < 0.05, "late Bellman loss should be small, got {}", mean_tail);
    }

    #[test]
    fn noise_decays_linearly_across_episodes() {
        let cfg = MetaConfig { episodes: 6, ..MetaConfig::default() };
        assert!((noise_scale(&cfg, 0) - 0.3).abs() < 1e-12);
        assert!((noise_scale(&cfg, 5) - 0.05).abs() < 1e-12);
        let mid = noise_scale(&cfg, 2) - noise_scale(&cfg, 3);
        assert!((mid - 0.05).abs() < 1e-12, "uniform decrement per episode");
        let one = MetaConfig { episodes: 1, ..MetaConfig::default() };
        assert_eq!(noise_scale(&one, 0), 0.3);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = tiny_cfg();
        cfg.gamma = 1.0;
        assert!(meta_train(&admets_dist(None), &cfg, 1).is_err());
        let mut cfg = tiny_cfg();
        cfg.buffer_capacity = 2;
        cfg.batch_size = 4;
        assert!(meta_train(&admets_dist(None), &cfg, 1).is_err());
        let mut cfg = tiny_cfg();
        cfg.noise_lo = 0.4;
        assert!(meta_train(&admets_dist(None), &cfg, 1).is_err());
    }
}

