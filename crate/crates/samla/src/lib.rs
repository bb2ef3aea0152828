//! Safe meta-active learning: a learned acquisition function encoded into a
//! chance-constrained mixed-integer program.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`nn`]: dense tensors, MLP/LSTM forward and backward, Adam.
//! * [`milp`]: a dense two-phase simplex, branch and bound over binaries,
//!   and exact encodings of ReLU networks as mixed-integer constraints.
//! * [`ensemble`]: bootstrapped linear dynamics models with finite-difference
//!   linearization and parameter spread estimates.
//! * [`policy`]: chance-constrained action selection inside a sphere of
//!   safety, with the learned acquisition value as the objective.
//! * [`acquisition`]: the LSTM context encoder, the Q head, replay, and the
//!   DQN-style meta-training loop.
//! * [`envs`], [`baselines`], [`engine`]: simulated subjects (damaged
//!   aircraft, scalar dose-response), classical acquisition baselines, and
//!   the episode engines that tie a subject to an agent.
//! * [`harness`]: config files, experiment runner, CSV output, checkpoints,
//!   and the command-line entry point.

pub mod acquisition;
pub mod baselines;
pub mod engine;
pub mod ensemble;
pub mod envs;
pub mod harness;
pub mod milp;
pub mod nn;
pub mod policy;
pub mod seed;
pub mod tensor;
