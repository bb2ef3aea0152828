//! Experiment configuration: a flat, diffable key-value file with
//! `[section]` headers. Every key is validated against the schema below;
//! unknown sections or keys are errors, as are malformed values. Missing
//! keys fall back to per-domain defaults.
//!
//! ```text
//! # aircraft identification, two policies, three seeds
//! [run]
//! domain = aircraft
//! policy = ours random
//! seeds = 0 1 2
//! out_dir = runs/demo
//!
//! [episode]
//! steps = 20
//! epsilon = 0.05
//!
//! [objective]
//! lambda1 = 1.0
//! ```

use crate::engine::{AdmetsDistribution, AircraftDistribution, PolicyChoice, TaskDistribution};
use crate::acquisition::MetaConfig;
use crate::ensemble::EnsembleConfig;
use crate::envs::{default_safety_spec, AircraftConfig};
use crate::policy::PolicyConfig;
use std::collections::HashMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io { what: String },
    Syntax { line: usize, what: String },
    UnknownSection { line: usize, name: String },
    UnknownKey { section: &'static str, key: String },
    DuplicateKey { key: String },
    BadValue { key: &'static str, what: String },
    Missing { key: &'static str },
    Invalid { what: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { what } => write!(f, "config io: {}", what),
            ConfigError::Syntax { line, what } => write!(f, "config line {}: {}", line, what),
            ConfigError::UnknownSection { line, name } => {
                write!(f, "config line {}: unknown section [{}]", line, name)
            }
            ConfigError::UnknownKey { section, key } => {
                write!(f, "unknown key '{}' in section [{}]", key, section)
            }
            ConfigError::DuplicateKey { key } => write!(f, "key '{}' set twice", key),
            ConfigError::BadValue { key, what } => write!(f, "bad value for '{}': {}", key, what),
            ConfigError::Missing { key } => write!(f, "missing required key '{}'", key),
            ConfigError::Invalid { what } => write!(f, "invalid config: {}", what),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Aircraft,
    Admets,
}

impl Domain {
    pub fn name(&self) -> &'static str {
        match self {
            Domain::Aircraft => "aircraft",
            Domain::Admets => "admets",
        }
    }
}

/// Everything a run needs, resolved and validated.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    // [run]
    pub domain: Domain,
    pub policies: Vec<PolicyChoice>,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub checkpoint: Option<String>,
    // [episode]
    /// Decision steps M per evaluation episode.
    pub steps: usize,
    /// Warm-start samples before the first decision.
    pub warm: usize,
    /// Fraction of the action box warm-up commands span (aircraft).
    pub warm_scale: f64,
    pub epsilon: f64,
    /// Return window T (sphere horizon); ignored by the admets domain.
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    // [objective]
    pub lambda1: f64,
    pub slack_penalty: f64,
    pub node_limit: u64,
    pub baseline_samples: usize,
    // [meta]
    /// Meta-training episodes N.
    pub episodes: usize,
    /// Steps per meta-training episode (defaults to `steps`).
    pub meta_steps: usize,
    pub gamma: f64,
    pub tau: f64,
    pub buffer: usize,
    pub batch: usize,
    pub noise_hi: f64,
    pub noise_lo: f64,
    pub lr: f64,
    pub target_candidates: usize,
    // [network]
    pub lstm_hidden: usize,
    pub z_dim: usize,
    pub q_hidden: (usize, usize),
    // [ensemble]
    pub ens_members: usize,
    pub ens_hidden: Vec<usize>,
    pub ens_epochs: usize,
    pub ens_warm_epochs: usize,
    pub ens_lr: f64,
    // [sweep]
    pub sweep_lambda1: Vec<f64>,
    pub sweep_epsilon: Vec<f64>,
}

const SECTIONS: [&str; 7] = ["run", "episode", "objective", "meta", "network", "ensemble", "sweep"];

fn section_keys(section: &str) -> &'static [&'static str] {
    match section {
        "run" => &["domain", "policy", "seeds", "out_dir", "checkpoint"],
        "episode" => &["steps", "warm", "warm_scale", "epsilon", "horizon", "state_dim", "action_dim"],
        "objective" => &["lambda1", "slack_penalty", "node_limit", "baseline_samples"],
        "meta" => &[
            "episodes",
            "meta_steps",
            "gamma",
            "tau",
            "buffer",
            "batch",
            "noise_hi",
            "noise_lo",
            "lr",
            "target_candidates",
        ],
        "network" => &["lstm_hidden", "z_dim", "q_hidden"],
        "ensemble" => &["members", "hidden", "epochs", "warm_epochs", "ens_lr"],
        "sweep" => &["lambda1", "epsilon"],
        _ => &[],
    }
}

/// Raw `section.key -> value` with syntax checked, semantics not yet.
fn tokenize(text: &str) -> Result<HashMap<String, String>, ConfigError> {
    let mut out = HashMap::new();
    let mut section: Option<&'static str> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or(ConfigError::Syntax { line: line_no, what: "unclosed section header".into() })?
                .trim();
            section = match SECTIONS.iter().find(|s| **s == name) {
                Some(s) => Some(s),
                None => {
                    return Err(ConfigError::UnknownSection { line: line_no, name: name.into() })
                }
            };
            continue;
        }
        let sec = section.ok_or(ConfigError::Syntax {
            line: line_no,
            what: "key before any [section] header".into(),
        })?;
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
            line: line_no,
            what: "expected 'key = value'".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let known = section_keys(sec).iter().find(|k| **k == key);
        let known = match known {
            Some(k) => *k,
            None => return Err(ConfigError::UnknownKey { section: sec, key: key.into() }),
        };
        let full = format!("{}.{}", sec, known);
        if out.insert(full.clone(), value.to_string()).is_some() {
            return Err(ConfigError::DuplicateKey { key: full });
        }
    }
    Ok(out)
}

struct Raw(HashMap<String, String>);

impl Raw {
    fn take(&mut self, key: &'static str) -> Option<String> {
        self.0.remove(key)
    }

    fn usize(&mut self, key: &'static str, default: usize) -> Result<usize, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key,
                what: format!("'{}' is not a nonnegative integer", v),
            }),
        }
    }

    fn u64(&mut self, key: &'static str, default: u64) -> Result<u64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key,
                what: format!("'{}' is not a nonnegative integer", v),
            }),
        }
    }

    fn f64(&mut self, key: &'static str, default: f64) -> Result<f64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => {
                let x: f64 = v.parse().map_err(|_| ConfigError::BadValue {
                    key,
                    what: format!("'{}' is not a number", v),
                })?;
                if !x.is_finite() {
                    return Err(ConfigError::BadValue { key, what: "must be finite".into() });
                }
                Ok(x)
            }
        }
    }

    fn usize_list(&mut self, key: &'static str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(v) => {
                let items: Result<Vec<usize>, _> =
                    v.split_whitespace().map(|t| t.parse::<usize>()).collect();
                let items = items.map_err(|_| ConfigError::BadValue {
                    key,
                    what: format!("'{}' is not a space-separated integer list", v),
                })?;
                if items.is_empty() {
                    return Err(ConfigError::BadValue { key, what: "list is empty".into() });
                }
                Ok(items)
            }
        }
    }

    fn f64_list(&mut self, key: &'static str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(v) => {
                let items: Result<Vec<f64>, _> =
                    v.split_whitespace().map(|t| t.parse::<f64>()).collect();
                let items = items.map_err(|_| ConfigError::BadValue {
                    key,
                    what: format!("'{}' is not a space-separated number list", v),
                })?;
                if items.is_empty() || items.iter().any(|x| !x.is_finite()) {
                    return Err(ConfigError::BadValue { key, what: "needs finite entries".into() });
                }
                Ok(items)
            }
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = Raw(tokenize(text)?);

    let domain = match raw.take("run.domain") {
        None => return Err(ConfigError::Missing { key: "run.domain" }),
        Some(v) => match v.as_str() {
            "aircraft" => Domain::Aircraft,
            "admets" => Domain::Admets,
            other => {
                return Err(ConfigError::BadValue {
                    key: "run.domain",
                    what: format!("'{}' is not aircraft|admets", other),
                })
            }
        },
    };

    let policies = match raw.take("run.policy") {
        None => vec![PolicyChoice::Ours],
        Some(v) => {
            let mut out = Vec::new();
            for tok in v.split_whitespace() {
                match PolicyChoice::parse(tok) {
                    Some(p) if !out.contains(&p) => out.push(p),
                    Some(_) => {
                        return Err(ConfigError::BadValue {
                            key: "run.policy",
                            what: format!("policy '{}' listed twice", tok),
                        })
                    }
                    None => {
                        return Err(ConfigError::BadValue {
                            key: "run.policy",
                            what: format!("'{}' is not a policy name", tok),
                        })
                    }
                }
            }
            if out.is_empty() {
                return Err(ConfigError::BadValue { key: "run.policy", what: "list is empty".into() });
            }
            out
        }
    };

    let seeds = match raw.take("run.seeds") {
        None => vec![0],
        Some(v) => {
            let items: Result<Vec<u64>, _> = v.split_whitespace().map(|t| t.parse::<u64>()).collect();
            items.map_err(|_| ConfigError::BadValue {
                key: "run.seeds",
                what: format!("'{}' is not a space-separated seed list", v),
            })?
        }
    };

    let out_dir = raw.take("run.out_dir").unwrap_or_else(|| "runs".to_string());
    let checkpoint = raw.take("run.checkpoint");

    let (steps_d, eps_d, horizon_d, state_d, action_d) = match domain {
        Domain::Aircraft => (20, 0.05, 2, 6, 4),
        Domain::Admets => (15, 0.1, 0, 1, 1),
    };

    let steps = raw.usize("episode.steps", steps_d)?;
    let warm = raw.usize("episode.warm", 3)?;
    let warm_scale = raw.f64("episode.warm_scale", 1.0)?;
    let epsilon = raw.f64("episode.epsilon", eps_d)?;
    let horizon = raw.usize("episode.horizon", horizon_d)?;
    let state_dim = raw.usize("episode.state_dim", state_d)?;
    let action_dim = raw.usize("episode.action_dim", action_d)?;

    let lambda1 = raw.f64("objective.lambda1", 1.0)?;
    let slack_penalty = raw.f64("objective.slack_penalty", 100.0)?;
    let node_limit = raw.u64("objective.node_limit", 100_000)?;
    let baseline_samples = raw.usize("objective.baseline_samples", 64)?;

    let episodes = raw.usize("meta.episodes", 500)?;
    let meta_steps = raw.usize("meta.meta_steps", steps)?;
    let gamma = raw.f64("meta.gamma", 0.9)?;
    let tau = raw.f64("meta.tau", 0.01)?;
    let buffer = raw.usize("meta.buffer", 4096)?;
    let batch = raw.usize("meta.batch", 16)?;
    let noise_hi = raw.f64("meta.noise_hi", 0.3)?;
    let noise_lo = raw.f64("meta.noise_lo", 0.05)?;
    let lr = raw.f64("meta.lr", 1e-3)?;
    let target_candidates = raw.usize("meta.target_candidates", 64)?;

    let lstm_hidden = raw.usize("network.lstm_hidden", 8)?;
    let z_dim = raw.usize("network.z_dim", 6)?;
    let qh = raw.usize_list("network.q_hidden", &[12, 12])?;
    if qh.len() != 2 || qh.iter().any(|&w| w == 0) {
        return Err(ConfigError::BadValue {
            key: "network.q_hidden",
            what: "needs exactly two positive widths".into(),
        });
    }
    let q_hidden = (qh[0], qh[1]);

    let ens_members = raw.usize("ensemble.members", 5)?;
    let ens_hidden = raw.usize_list("ensemble.hidden", &[32])?;
    let ens_epochs = raw.usize("ensemble.epochs", 200)?;
    let ens_warm_epochs = raw.usize("ensemble.warm_epochs", 40)?;
    let ens_lr = raw.f64("ensemble.ens_lr", 0.01)?;

    let sweep_lambda1 = raw.f64_list("sweep.lambda1", &[lambda1])?;
    let sweep_epsilon = raw.f64_list("sweep.epsilon", &[epsilon])?;

    debug_assert!(raw.0.is_empty(), "tokenizer admitted a key the parser ignores: {:?}", raw.0);

    let cfg = ExperimentConfig {
        domain,
        policies,
        seeds,
        out_dir,
        checkpoint,
        steps,
        warm,
        warm_scale,
        epsilon,
        horizon,
        state_dim,
        action_dim,
        lambda1,
        slack_penalty,
        node_limit,
        baseline_samples,
        episodes,
        meta_steps,
        gamma,
        tau,
        buffer,
        batch,
        noise_hi,
        noise_lo,
        lr,
        target_candidates,
        lstm_hidden,
        z_dim,
        q_hidden,
        ens_members,
        ens_hidden,
        ens_epochs,
        ens_warm_epochs,
        ens_lr,
        sweep_lambda1,
        sweep_epsilon,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { what: format!("{}: {}", path.display(), e) })?;
    parse_config(&text)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |what: &str| Err(ConfigError::Invalid { what: what.to_string() });
        if self.seeds.is_empty() {
            return bad("seeds list is empty");
        }
        if self.steps == 0 || self.episodes == 0 || self.meta_steps == 0 {
            return bad("steps, meta_steps, and episodes must be positive");
        }
        if self.warm == 0 {
            return bad("warm must be positive");
        }
        if !(self.warm_scale > 0.0 && self.warm_scale <= 1.0) {
            return bad("warm_scale must be in (0, 1]");
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
            return bad("epsilon must be in (0, 0.5]");
        }
        if self.lambda1 < 0.0 || self.slack_penalty < 0.0 {
            return bad("lambda1 and slack_penalty must be nonnegative");
        }
        match self.domain {
            Domain::Aircraft => {
                if self.horizon == 0 || self.horizon > 8 {
                    return bad("aircraft horizon must be in 1..=8");
                }
                if !(2..=12).contains(&self.state_dim) {
                    return bad("aircraft state_dim must be in 2..=12");
                }
                if self.action_dim == 0 || self.action_dim > self.state_dim {
                    return bad("aircraft action_dim must be in 1..=state_dim");
                }
            }
            Domain::Admets => {
                if self.state_dim != 1 || self.action_dim != 1 {
                    return bad("admets is a scalar domain: state_dim = action_dim = 1");
                }
                if self.horizon != 0 {
                    return bad("admets has no return window: horizon must be 0");
                }
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if self.batch == 0 || self.buffer < self.batch {
            return bad("buffer must hold at least one batch");
        }
        if !(self.noise_lo >= 0.0 && self.noise_hi >= self.noise_lo) {
            return bad("noise range must satisfy 0 <= lo <= hi");
        }
        if self.sweep_lambda1.iter().any(|&l| l < 0.0) {
            return bad("sweep lambda1 values must be nonnegative");
        }
        if self.sweep_epsilon.iter().any(|&e| !(e > 0.0 && e <= 0.5)) {
            return bad("sweep epsilon values must be in (0, 0.5]");
        }
        if self.domain == Domain::Aircraft && self.policies.contains(&PolicyChoice::Bo) {
            return bad("bo applies only to the admets domain");
        }
        if self.domain == Domain::Admets && self.policies.contains(&PolicyChoice::Epistemic) {
            return bad("epistemic applies only to the aircraft domain");
        }
        Ok(())
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            members: self.ens_members,
            hidden: self.ens_hidden.clone(),
            epochs: self.ens_epochs,
            warm_epochs: self.ens_warm_epochs,
            lr: self.ens_lr,
            // Warm starts must work right after the warm samples arrive.
            min_samples: 2.min(self.warm),
            warm_start: true,
        }
    }

    pub fn distribution(&self) -> TaskDistribution {
        match self.domain {
            Domain::Aircraft => {
                let cfg = AircraftConfig {
                    state_dim: self.state_dim,
                    action_dim: self.action_dim,
                    ..AircraftConfig::default()
                };
                let mut spec = default_safety_spec(self.state_dim, self.action_dim, cfg.action_limit);
                spec.horizon = self.horizon;
                for d in 0..self.state_dim {
                    spec.epsilon.set(d, self.epsilon);
                }
                TaskDistribution::Aircraft(AircraftDistribution {
                    cfg,
                    spec,
                    ens_cfg: self.ensemble_config(),
                    warm_actions: self.warm,
                    warm_scale: self.warm_scale,
                    fixed_seed: None,
                })
            }
            Domain::Admets => TaskDistribution::Admets(AdmetsDistribution {
                epsilon: self.epsilon,
                warm_observations: self.warm,
                fixed_seed: None,
            }),
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        let mut cfg = PolicyConfig::new(self.lambda1, self.slack_penalty);
        cfg.baseline_samples = self.baseline_samples;
        cfg.node_limit = self.node_limit;
        cfg
    }

    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            episodes: self.episodes,
            steps: self.meta_steps,
            gamma: self.gamma,
            tau: self.tau,
            buffer_capacity: self.buffer,
            batch_size: self.batch,
            target_candidates: self.target_candidates,
            noise_hi: self.noise_hi,
            noise_lo: self.noise_lo,
            lr: self.lr,
            lambda1: self.lambda1,
            slack_penalty: self.slack_penalty,
            node_limit: self.node_limit,
            lstm_hidden: self.lstm_hidden,
            z_dim: self.z_dim,
            q_hidden: self.q_hidden,
        }
    }

    /// Plan length the acquisition must be built for.
    pub fn plan_steps(&self) -> usize {
        self.distribution().plan_steps()
    }
}
