//! Experiment harness: runs evaluation episodes over (policy x seed) cells,
//! records per-step metrics to CSV, and aggregates summaries.
//!
//! Determinism contract: with the same config and seeds, every output file is
//! byte-identical except the wall-time columns (`solve_ms` in episode files,
//! `solve_ms_mean` in the summary), which are kept last so they are easy to
//! strip before comparison.

pub mod checkpoint;
pub mod cli;
pub mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use cli::cli_main;
pub use config::{load_config, parse_config, ConfigError, Domain, ExperimentConfig};

use crate::acquisition::{compute_reward, AcquisitionParams};
use crate::engine::{EngineError, PolicyChoice, TaskDistribution};
use crate::seed::derive_seed;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::path::{Path, PathBuf};

/// Episode CSV schema revision; bump together with any column change.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Seed stream for per-cell acquisition initialization when no checkpoint
/// is supplied.
const STREAM_ACQ_INIT: u64 = 0xA1;

#[derive(Debug)]
pub enum HarnessError {
    Config(ConfigError),
    /// Engine failure; `step` is 0 during initialization, else the 1-based
    /// decision step that failed.
    Engine { step: usize, source: EngineError },
    Checkpoint(CheckpointError),
    Csv { what: String },
    Io { what: String },
    /// Loaded acquisition does not fit the configured task dimensions.
    Mismatch { what: String },
    EmptyInput,
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(e) => write!(f, "{}", e),
            HarnessError::Engine { step, source } => {
                if *step == 0 {
                    write!(f, "episode setup: {}", source)
                } else {
                    write!(f, "episode step {}: {}", step, source)
                }
            }
            HarnessError::Checkpoint(e) => write!(f, "{}", e),
            HarnessError::Csv { what } => write!(f, "csv: {}", what),
            HarnessError::Io { what } => write!(f, "io: {}", what),
            HarnessError::Mismatch { what } => write!(f, "{}", what),
            HarnessError::EmptyInput => write!(f, "no records to summarize"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<ConfigError> for HarnessError {
    fn from(e: ConfigError) -> Self {
        HarnessError::Config(e)
    }
}

impl From<CheckpointError> for HarnessError {
    fn from(e: CheckpointError) -> Self {
        HarnessError::Checkpoint(e)
    }
}

/// One decision step of an evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    /// 1-based decision step.
    pub step: usize,
    /// Executed action (one control step, not the whole plan).
    pub action: Vec<f64>,
    /// Percent decrease in model error produced by this step.
    pub reward: f64,
    /// Model error e_t after retraining on this step's observation.
    pub model_error: f64,
    /// Inside the sphere of safety after the step (aircraft), or free of
    /// side effects (admets).
    pub safe: bool,
    pub side_effect: bool,
    /// True when this step closes a batch of T steps; safety rates are
    /// computed over these rows only.
    pub batch_end: bool,
    pub q_value: Option<f64>,
    pub q_baseline: Option<f64>,
    pub slack: Option<f64>,
    /// Branch-and-bound nodes expanded by the step's solve (0 for baselines).
    pub nodes: u64,
    /// Wall time of the step's action selection, milliseconds. Excluded from
    /// determinism comparisons.
    pub solve_ms: f64,
}

/// Full record of one evaluation episode: exactly `steps` rows plus the
/// initial model error.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub domain: String,
    pub policy: PolicyChoice,
    pub seed: u64,
    /// Model error after warm-start, before the first decision.
    pub initial_error: f64,
    pub rows: Vec<StepRow>,
}

/// Metrics derived from one episode record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    /// 1 - e_M / e_0.
    pub cumulative_gain: f64,
    /// Trapezoidal area under the cumulative information-gain curve
    /// g_t = 1 - e_t / e_0, unit step width, g_0 = 0.
    pub auc: f64,
    pub final_error: f64,
    /// Fraction of batch-end rows that are safe; None when no batch closed.
    pub safety_rate: Option<f64>,
    /// Fraction of all rows flagged as side effects.
    pub side_effect_rate: f64,
    pub mean_solve_ms: f64,
    pub mean_nodes: f64,
}

/// Runs one evaluation episode: warm-start the model, then `cfg.steps`
/// rounds of select / execute / retrain. No exploration noise is applied;
/// the policy's chosen action is executed as-is.
pub fn run_episode(
    acq: &AcquisitionParams,
    dist: &TaskDistribution,
    policy: PolicyChoice,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<EpisodeRecord, HarnessError> {
    let at = |step: usize| move |source: EngineError| HarnessError::Engine { step, source };
    let mut task = dist.sample(seed).map_err(at(0))?;
    if policy == PolicyChoice::Ours {
        if acq.state_dim != task.state_dim()
            || acq.action_dim != task.action_dim()
            || acq.plan_steps != task.plan_steps()
        {
            return Err(HarnessError::Mismatch {
                what: format!(
                    "acquisition built for state {} action {} plan {}, task needs {} {} {}",
                    acq.state_dim,
                    acq.action_dim,
                    acq.plan_steps,
                    task.state_dim(),
                    task.action_dim(),
                    task.plan_steps()
                ),
            });
        }
    }
    task.initialize().map_err(at(0))?;
    let initial_error = task.model_error().map_err(at(0))?;
    let pcfg = cfg.policy_config();
    let action_dim = task.action_dim();

    let mut rows = Vec::with_capacity(cfg.steps);
    let mut e_prev = initial_error;
    for step in 1..=cfg.steps {
        let (plan, diag) = match policy {
            PolicyChoice::Ours => task.select_plan(acq, &pcfg).map_err(at(step))?,
            other => task.select_baseline(other, seed).map_err(at(step))?,
        };
        let action = Tensor::from_vec(vec![action_dim], plan.data()[..action_dim].to_vec())
            .expect("selected actions are finite");
        let flags = task.execute(&action).map_err(at(step))?;
        let e_curr = task.model_error().map_err(at(step))?;
        let reward =
            compute_reward(e_prev, e_curr).map_err(|e| at(step)(EngineError::Acq(e)))?;
        rows.push(StepRow {
            step,
            action: action.data().to_vec(),
            reward,
            model_error: e_curr,
            safe: flags.safe,
            side_effect: flags.side_effect,
            batch_end: flags.batch_end,
            q_value: diag.q_value,
            q_baseline: diag.q_baseline,
            slack: diag.slack_total,
            nodes: diag.nodes,
            solve_ms: diag.solve_ms,
        });
        e_prev = e_curr;
    }
    Ok(EpisodeRecord {
        domain: match dist {
            TaskDistribution::Aircraft(_) => "aircraft".to_string(),
            TaskDistribution::Admets(_) => "admets".to_string(),
        },
        policy,
        seed,
        initial_error,
        rows,
    })
}

/// Summary metrics of one episode. Fails on an empty record.
pub fn episode_metrics(rec: &EpisodeRecord) -> Result<EpisodeMetrics, HarnessError> {
    if rec.rows.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let e0 = rec.initial_error;
    let gain = |e: f64| if e0 > 1e-12 { 1.0 - e / e0 } else { 0.0 };
    let mut auc = 0.0;
    let mut g_prev = 0.0;
    for row in &rec.rows {
        let g = gain(row.model_error);
        auc += 0.5 * (g_prev + g);
        g_prev = g;
    }
    let final_error = rec.rows.last().expect("nonempty").model_error;
    let closed: Vec<&StepRow> = rec.rows.iter().filter(|r| r.batch_end).collect();
    let safety_rate = if closed.is_empty() {
        None
    } else {
        Some(closed.iter().filter(|r| r.safe).count() as f64 / closed.len() as f64)
    };
    let n = rec.rows.len() as f64;
    Ok(EpisodeMetrics {
        cumulative_gain: gain(final_error),
        auc,
        final_error,
        safety_rate,
        side_effect_rate: rec.rows.iter().filter(|r| r.side_effect).count() as f64 / n,
        mean_solve_ms: rec.rows.iter().map(|r| r.solve_ms).sum::<f64>() / n,
        mean_nodes: rec.rows.iter().map(|r| r.nodes as f64).sum::<f64>() / n,
    })
}

fn fmt_f64(x: f64) -> String {
    // Debug formatting prints the shortest decimal that parses back to the
    // same bits, so CSV round-trips are exact.
    format!("{:?}", x)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Serializes an episode record. Layout: schema comment lines, a header row,
/// then exactly one row per decision step with `solve_ms` last.
pub fn episode_csv(rec: &EpisodeRecord) -> String {
    let dim = rec.rows.first().map(|r| r.action.len()).unwrap_or(0);
    let mut out = String::new();
    out.push_str(&format!("# samla-episode v{}\n", CSV_SCHEMA_VERSION));
    out.push_str(&format!(
        "# domain {} policy {} seed {} initial_error {}\n",
        rec.domain,
        rec.policy.name(),
        rec.seed,
        fmt_f64(rec.initial_error)
    ));
    out.push_str("step");
    for j in 0..dim {
        out.push_str(&format!(",action_{}", j));
    }
    out.push_str(",reward,model_error,safe,side_effect,batch_end,q_value,q_baseline,slack,nodes,solve_ms\n");
    for row in &rec.rows {
        out.push_str(&row.step.to_string());
        for a in &row.action {
            out.push(',');
            out.push_str(&fmt_f64(*a));
        }
        out.push_str(&format!(
            ",{},{},{},{},{},{},{},{},{},{}\n",
            fmt_f64(row.reward),
            fmt_f64(row.model_error),
            row.safe,
            row.side_effect,
            row.batch_end,
            fmt_opt(row.q_value),
            fmt_opt(row.q_baseline),
            fmt_opt(row.slack),
            row.nodes,
            fmt_f64(row.solve_ms),
        ));
    }
    out
}

fn csv_err(what: String) -> HarnessError {
    HarnessError::Csv { what }
}

fn parse_field<T: std::str::FromStr>(field: &str, name: &str, line: usize) -> Result<T, HarnessError> {
    field
        .parse()
        .map_err(|_| csv_err(format!("line {}: bad {} '{}'", line, name, field)))
}

fn parse_opt(field: &str, name: &str, line: usize) -> Result<Option<f64>, HarnessError> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_field(field, name, line).map(Some)
    }
}

/// Parses an episode CSV produced by [`episode_csv`], validating the schema
/// version, header, types, and the e_t >= 0 invariant.
pub fn parse_episode_csv(text: &str) -> Result<EpisodeRecord, HarnessError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(csv_err("empty file".into()))?;
    let version: u32 = first
        .strip_prefix("# samla-episode v")
        .ok_or(csv_err("missing schema line".into()))?
        .trim()
        .parse()
        .map_err(|_| csv_err("bad schema version".into()))?;
    if version != CSV_SCHEMA_VERSION {
        return Err(csv_err(format!(
            "schema v{} not supported (expected v{})",
            version, CSV_SCHEMA_VERSION
        )));
    }
    let (_, meta) = lines.next().ok_or(csv_err("missing metadata line".into()))?;
    let toks: Vec<&str> = meta.trim_start_matches('#').split_whitespace().collect();
    if toks.len() != 8 || toks[0] != "domain" || toks[2] != "policy" || toks[4] != "seed"
        || toks[6] != "initial_error"
    {
        return Err(csv_err("malformed metadata line".into()));
    }
    let domain = toks[1].to_string();
    let policy = PolicyChoice::parse(toks[3])
        .ok_or(csv_err(format!("unknown policy '{}'", toks[3])))?;
    let seed: u64 = parse_field(toks[5], "seed", 2)?;
    let initial_error: f64 = parse_field(toks[7], "initial_error", 2)?;

    let (_, header) = lines.next().ok_or(csv_err("missing header".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let dim = cols.iter().filter(|c| c.starts_with("action_")).count();
    let expected: Vec<String> = std::iter::once("step".to_string())
        .chain((0..dim).map(|j| format!("action_{}", j)))
        .chain(
            ["reward", "model_error", "safe", "side_effect", "batch_end", "q_value",
             "q_baseline", "slack", "nodes", "solve_ms"]
                .iter()
                .map(|s| s.to_string()),
        )
        .collect();
    if cols != expected {
        return Err(csv_err("header does not match schema".into()));
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != expected.len() {
            return Err(csv_err(format!("line {}: wrong field count", line_no)));
        }
        let step: usize = parse_field(f[0], "step", line_no)?;
        let mut action = Vec::with_capacity(dim);
        for j in 0..dim {
            action.push(parse_field(f[1 + j], "action", line_no)?);
        }
        let b = 1 + dim;
        let model_error: f64 = parse_field(f[b + 1], "model_error", line_no)?;
        if !(model_error >= 0.0) {
            return Err(csv_err(format!("line {}: negative model_error", line_no)));
        }
        rows.push(StepRow {
            step,
            action,
            reward: parse_field(f[b], "reward", line_no)?,
            model_error,
            safe: parse_field(f[b + 2], "safe", line_no)?,
            side_effect: parse_field(f[b + 3], "side_effect", line_no)?,
            batch_end: parse_field(f[b + 4], "batch_end", line_no)?,
            q_value: parse_opt(f[b + 5], "q_value", line_no)?,
            q_baseline: parse_opt(f[b + 6], "q_baseline", line_no)?,
            slack: parse_opt(f[b + 7], "slack", line_no)?,
            nodes: parse_field(f[b + 8], "nodes", line_no)?,
            solve_ms: parse_field(f[b + 9], "solve_ms", line_no)?,
        });
    }
    if rows.iter().enumerate().any(|(i, r)| r.step != i + 1) {
        return Err(csv_err("steps are not 1..=M".into()));
    }
    Ok(EpisodeRecord { domain, policy, seed, initial_error, rows })
}

/// Drops the trailing (wall-time) column from every row of a CSV produced by
/// this module, leaving only the deterministic columns.
pub fn strip_wall_time(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            if line.starts_with('#') {
                line.to_string()
            } else {
                match line.rfind(',') {
                    Some(pos) => line[..pos].to_string(),
                    None => line.to_string(),
                }
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Aggregate over the seeds of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySummary {
    pub policy: PolicyChoice,
    pub cells: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub gain_mean: f64,
    pub gain_std: f64,
    pub final_error_mean: f64,
    pub final_error_std: f64,
    pub safety_rate_mean: f64,
    pub safety_rate_std: f64,
    pub side_effect_rate_mean: f64,
    pub nodes_mean: f64,
    pub solve_ms_mean: f64,
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub policy: PolicyChoice,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub cells_total: usize,
    pub failures: Vec<CellFailure>,
    pub summary: Vec<PolicySummary>,
    pub episode_files: Vec<PathBuf>,
}

impl ExperimentOutcome {
    /// False when more than 10% of cells failed.
    pub fn acceptable(&self) -> bool {
        self.failures.len() as f64 <= 0.10 * self.cells_total as f64
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates per-episode metrics into one row per policy, preserving the
/// order policies appear in `order`.
pub fn summarize(
    cells: &[(PolicyChoice, EpisodeMetrics)],
    order: &[PolicyChoice],
) -> Result<Vec<PolicySummary>, HarnessError> {
    if cells.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let mut out = Vec::new();
    for &policy in order {
        let ms: Vec<&EpisodeMetrics> =
            cells.iter().filter(|(p, _)| *p == policy).map(|(_, m)| m).collect();
        if ms.is_empty() {
            continue;
        }
        let col = |f: &dyn Fn(&EpisodeMetrics) -> f64| -> (f64, f64) {
            mean_std(&ms.iter().map(|m| f(m)).collect::<Vec<f64>>())
        };
        let (auc_mean, auc_std) = col(&|m| m.auc);
        let (gain_mean, gain_std) = col(&|m| m.cumulative_gain);
        let (final_error_mean, final_error_std) = col(&|m| m.final_error);
        let safeties: Vec<f64> = ms.iter().filter_map(|m| m.safety_rate).collect();
        let (safety_rate_mean, safety_rate_std) = mean_std(&safeties);
        let (side_effect_rate_mean, _) = col(&|m| m.side_effect_rate);
        let (nodes_mean, _) = col(&|m| m.mean_nodes);
        let (solve_ms_mean, _) = col(&|m| m.mean_solve_ms);
        out.push(PolicySummary {
            policy,
            cells: ms.len(),
            auc_mean,
            auc_std,
            gain_mean,
            gain_std,
            final_error_mean,
            final_error_std,
            safety_rate_mean,
            safety_rate_std,
            side_effect_rate_mean,
            nodes_mean,
            solve_ms_mean,
        })
    }
    Ok(out)
}

/// Serializes the summary table; `solve_ms_mean` stays last for wall-time
/// stripping.
pub fn summary_csv(rows: &[PolicySummary]) -> String {
    let mut out = format!("# samla-summary v{}\n", CSV_SCHEMA_VERSION);
    out.push_str(
        "policy,cells,auc_mean,auc_std,gain_mean,gain_std,final_error_mean,final_error_std,\
         safety_rate_mean,safety_rate_std,side_effect_rate_mean,nodes_mean,solve_ms_mean\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.policy.name(),
            r.cells,
            fmt_f64(r.auc_mean),
            fmt_f64(r.auc_std),
            fmt_f64(r.gain_mean),
            fmt_f64(r.gain_std),
            fmt_f64(r.final_error_mean),
            fmt_f64(r.final_error_std),
            fmt_f64(r.safety_rate_mean),
            fmt_f64(r.safety_rate_std),
            fmt_f64(r.side_effect_rate_mean),
            fmt_f64(r.nodes_mean),
            fmt_f64(r.solve_ms_mean),
        ));
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    std::fs::write(path, contents)
        .map_err(|e| HarnessError::Io { what: format!("{}: {}", path.display(), e) })
}

/// Resolves the acquisition for a cell: the loaded checkpoint when one is
/// configured, otherwise a fresh random initialization derived from the
/// cell seed.
fn cell_acquisition(
    cfg: &ExperimentConfig,
    loaded: &Option<AcquisitionParams>,
    seed: u64,
) -> AcquisitionParams {
    if let Some(acq) = loaded {
        return acq.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ACQ_INIT));
    AcquisitionParams::init(
        cfg.state_dim,
        cfg.action_dim,
        cfg.plan_steps(),
        cfg.lstm_hidden,
        cfg.z_dim,
        cfg.q_hidden,
        &mut rng,
    )
}

/// Runs every (policy x seed) cell sequentially, writing one episode CSV per
/// cell plus `summary.csv` (and `failures.txt` when cells fail). A failing
/// cell is recorded and the run continues; `acceptable()` reports whether
/// the failure budget (10%) held.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    cfg.validate()?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| HarnessError::Io { what: format!("{}: {}", out_dir.display(), e) })?;

    let loaded = match &cfg.checkpoint {
        Some(path) if cfg.policies.contains(&PolicyChoice::Ours) => {
            let acq = load_checkpoint(Path::new(path))?;
            if acq.state_dim != cfg.state_dim
                || acq.action_dim != cfg.action_dim
                || acq.plan_steps != cfg.plan_steps()
            {
                return Err(HarnessError::Mismatch {
                    what: format!(
                        "checkpoint built for state {} action {} plan {}, config needs {} {} {}",
                        acq.state_dim,
                        acq.action_dim,
                        acq.plan_steps,
                        cfg.state_dim,
                        cfg.action_dim,
                        cfg.plan_steps()
                    ),
                });
            }
            Some(acq)
        }
        _ => None,
    };

    let dist = cfg.distribution();
    let mut metrics: Vec<(PolicyChoice, EpisodeMetrics)> = Vec::new();
    let mut failures = Vec::new();
    let mut episode_files = Vec::new();
    for &policy in &cfg.policies {
        for &seed in &cfg.seeds {
            let acq = cell_acquisition(cfg, &loaded, seed);
            match run_episode(&acq, &dist, policy, cfg, seed) {
                Ok(rec) => {
                    let path = out_dir.join(format!("episode_{}_{}.csv", policy.name(), seed));
                    write_file(&path, &episode_csv(&rec))?;
                    episode_files.push(path);
                    metrics.push((policy, episode_metrics(&rec)?));
                }
                Err(e) => {
                    failures.push(CellFailure { policy, seed, error: e.to_string() });
                }
            }
        }
    }

    let summary = if metrics.is_empty() { Vec::new() } else { summarize(&metrics, &cfg.policies)? };
    write_file(&out_dir.join("summary.csv"), &summary_csv(&summary))?;
    if !failures.is_empty() {
        let text: String = failures
            .iter()
            .map(|f| format!("{} seed {}: {}\n", f.policy.name(), f.seed, f.error))
            .collect();
        write_file(&out_dir.join("failures.txt"), &text)?;
    }
    Ok(ExperimentOutcome {
        out_dir,
        cells_total: cfg.policies.len() * cfg.seeds.len(),
        failures,
        summary,
        episode_files,
    })
}
