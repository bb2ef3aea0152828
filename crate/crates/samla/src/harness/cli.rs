//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure (bad config file, missing
//! checkpoint, failed cells over budget), 2 usage error (help printed).

use super::checkpoint::{describe_checkpoint, save_checkpoint};
use super::config::{load_config, ExperimentConfig};
use super::{run_experiment, HarnessError};
use crate::acquisition::meta_train;
use crate::engine::PolicyChoice;
use std::path::{Path, PathBuf};

const USAGE: &str = "\
usage: samla <command> --config PATH [--seed N] [--out DIR] [--policy LIST]

commands:
  meta-train   train the acquisition on the configured domain, save a checkpoint
  eval         run evaluation episodes for every (policy x seed) cell
  sweep        run eval over the configured lambda1/epsilon grids
  inspect      print the resolved config and checkpoint summary

flags:
  --config PATH   experiment config file (required)
  --seed N        single seed: replaces the config seed list (and seeds meta-train)
  --out DIR       override the output directory
  --policy LIST   override policies, comma-separated (ours,epistemic,diversity,bo,random)
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    MetaTrain,
    Eval,
    Sweep,
    Inspect,
}

#[derive(Debug)]
struct Cli {
    command: Command,
    config: PathBuf,
    seed: Option<u64>,
    out: Option<String>,
    policy: Option<Vec<PolicyChoice>>,
}

fn parse_args(args: &[String]) -> Result<Cli, String> {
    let mut it = args.iter();
    let command = match it.next().map(String::as_str) {
        Some("meta-train") => Command::MetaTrain,
        Some("eval") => Command::Eval,
        Some("sweep") => Command::Sweep,
        Some("inspect") => Command::Inspect,
        Some(other) => return Err(format!("unknown command '{}'", other)),
        None => return Err("no command given".to_string()),
    };
    let mut config = None;
    let mut seed = None;
    let mut out = None;
    let mut policy = None;
    while let Some(flag) = it.next() {
        let mut value = |name: &str| {
            it.next().cloned().ok_or(format!("flag {} needs a value", name))
        };
        match flag.as_str() {
            "--config" => config = Some(PathBuf::from(value("--config")?)),
            "--seed" => {
                let v = value("--seed")?;
                seed = Some(v.parse::<u64>().map_err(|_| format!("bad seed '{}'", v))?);
            }
            "--out" => out = Some(value("--out")?),
            "--policy" => {
                let v = value("--policy")?;
                let mut list = Vec::new();
                for tok in v.split(',') {
                    list.push(
                        PolicyChoice::parse(tok.trim())
                            .ok_or(format!("unknown policy '{}'", tok.trim()))?,
                    );
                }
                if list.is_empty() {
                    return Err("empty policy list".to_string());
                }
                policy = Some(list);
            }
            other => return Err(format!("unknown flag '{}'", other)),
        }
    }
    let config = config.ok_or("--config is required".to_string())?;
    Ok(Cli { command, config, seed, out, policy })
}

fn apply_overrides(cfg: &mut ExperimentConfig, cli: &Cli) -> Result<(), HarnessError> {
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(policies) = &cli.policy {
        cfg.policies = policies.clone();
    }
    cfg.validate()?;
    Ok(())
}

fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    match &cfg.checkpoint {
        Some(p) => PathBuf::from(p),
        None => Path::new(&cfg.out_dir).join("acquisition.ckpt"),
    }
}

fn run_meta_train(cfg: &ExperimentConfig, cli: &Cli) -> Result<(), HarnessError> {
    let dist = cfg.distribution();
    let seed = cli.seed.unwrap_or(cfg.seeds[0]);
    let report = meta_train(&dist, &cfg.meta_config(), seed)
        .map_err(|source| HarnessError::Engine { step: 0, source })?;
    let path = checkpoint_path(cfg);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| HarnessError::Io { what: format!("{}: {}", parent.display(), e) })?;
        }
    }
    save_checkpoint(&report.params, &path)?;
    let tail = report.episode_rewards.iter().rev().take(20).sum::<f64>()
        / report.episode_rewards.len().min(20).max(1) as f64;
    println!(
        "meta-train: {} episodes completed, {} skipped as infeasible, replay {} transitions",
        report.episode_rewards.len(),
        report.skipped_episodes,
        report.replay_len
    );
    println!("mean step reward over last 20 episodes: {:.4}", tail);
    if let Some(loss) = report.losses.last() {
        println!("final td loss: {:.6}", loss);
    }
    println!("checkpoint written to {}", path.display());
    Ok(())
}

fn print_summary(cfg: &ExperimentConfig, out: &super::ExperimentOutcome) {
    println!(
        "wrote {} episode files and summary.csv to {}",
        out.episode_files.len(),
        out.out_dir.display()
    );
    for row in &out.summary {
        println!(
            "policy {}: auc {:.4} +- {:.4}, final error {:.5} +- {:.5}, safety {:.3}, solve {:.1} ms",
            row.policy.name(),
            row.auc_mean,
            row.auc_std,
            row.final_error_mean,
            row.final_error_std,
            row.safety_rate_mean,
            row.solve_ms_mean
        );
    }
    println!("failures: {}/{} cells", out.failures.len(), cfg.policies.len() * cfg.seeds.len());
    for f in &out.failures {
        eprintln!("cell {} seed {} failed: {}", f.policy.name(), f.seed, f.error);
    }
}

fn run_eval(cfg: &ExperimentConfig) -> Result<bool, HarnessError> {
    let out = run_experiment(cfg)?;
    print_summary(cfg, &out);
    Ok(out.acceptable())
}

fn run_sweep(cfg: &ExperimentConfig) -> Result<bool, HarnessError> {
    let base = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&base)
        .map_err(|e| HarnessError::Io { what: format!("{}: {}", base.display(), e) })?;
    let mut grid_csv = format!("# samla-sweep v{}\n", super::CSV_SCHEMA_VERSION);
    grid_csv.push_str(
        "lambda1,epsilon,policy,cells,auc_mean,gain_mean,final_error_mean,safety_rate_mean,\
         side_effect_rate_mean,solve_ms_mean\n",
    );
    let mut total_cells = 0usize;
    let mut total_failed = 0usize;
    for &lambda1 in &cfg.sweep_lambda1 {
        for &epsilon in &cfg.sweep_epsilon {
            let mut point = cfg.clone();
            point.lambda1 = lambda1;
            point.epsilon = epsilon;
            point.out_dir =
                base.join(format!("l1_{}_eps_{}", lambda1, epsilon)).display().to_string();
            point.validate()?;
            let cells = point.policies.len() * point.seeds.len();
            total_cells += cells;
            match run_experiment(&point) {
                Ok(out) => {
                    total_failed += out.failures.len();
                    println!(
                        "sweep l1={} eps={}: {} cells, {} failed",
                        lambda1,
                        epsilon,
                        cells,
                        out.failures.len()
                    );
                    for row in &out.summary {
                        grid_csv.push_str(&format!(
                            "{:?},{:?},{},{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                            lambda1,
                            epsilon,
                            row.policy.name(),
                            row.cells,
                            row.auc_mean,
                            row.gain_mean,
                            row.final_error_mean,
                            row.safety_rate_mean,
                            row.side_effect_rate_mean,
                            row.solve_ms_mean
                        ));
                    }
                }
                Err(e) => {
                    total_failed += cells;
                    eprintln!("sweep l1={} eps={} failed outright: {}", lambda1, epsilon, e);
                }
            }
        }
    }
    let path = base.join("sweep.csv");
    std::fs::write(&path, &grid_csv)
        .map_err(|e| HarnessError::Io { what: format!("{}: {}", path.display(), e) })?;
    println!("sweep grid written to {}", path.display());
    println!("failures: {}/{} cells", total_failed, total_cells);
    Ok(total_failed as f64 <= 0.10 * total_cells as f64)
}

fn run_inspect(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    println!("domain {}", cfg.domain.name());
    println!(
        "policies {}",
        cfg.policies.iter().map(|p| p.name()).collect::<Vec<_>>().join(" ")
    );
    println!(
        "seeds {} ({} cells)",
        cfg.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "),
        cfg.policies.len() * cfg.seeds.len()
    );
    println!(
        "episode: steps {} warm {} epsilon {} horizon {} state_dim {} action_dim {}",
        cfg.steps, cfg.warm, cfg.epsilon, cfg.horizon, cfg.state_dim, cfg.action_dim
    );
    println!(
        "objective: lambda1 {} slack_penalty {} node_limit {} baseline_samples {}",
        cfg.lambda1, cfg.slack_penalty, cfg.node_limit, cfg.baseline_samples
    );
    println!(
        "meta: episodes {} steps {} gamma {} tau {} buffer {} batch {} lr {}",
        cfg.episodes, cfg.meta_steps, cfg.gamma, cfg.tau, cfg.buffer, cfg.batch, cfg.lr
    );
    println!(
        "network: lstm_hidden {} z_dim {} q_hidden {} {}",
        cfg.lstm_hidden, cfg.z_dim, cfg.q_hidden.0, cfg.q_hidden.1
    );
    println!(
        "ensemble: members {} hidden {:?} epochs {} warm_epochs {} lr {}",
        cfg.ens_members, cfg.ens_hidden, cfg.ens_epochs, cfg.ens_warm_epochs, cfg.ens_lr
    );
    println!("out_dir {}", cfg.out_dir);
    match &cfg.checkpoint {
        None => println!("checkpoint (none)"),
        Some(path) => {
            println!("checkpoint {}", path);
            let text = describe_checkpoint(Path::new(path))?;
            for line in text.lines() {
                println!("  {}", line);
            }
        }
    }
    Ok(())
}

/// Runs one CLI invocation; `args` excludes the program name.
pub fn cli_main(args: &[String]) -> i32 {
    let cli = match parse_args(args) {
        Ok(cli) => cli,
        Err(msg) => {
            eprintln!("error: {}", msg);
            eprintln!("{}", USAGE);
            return 2;
        }
    };
    let mut cfg = match load_config(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {}", e);
            return 1;
        }
    };
    if let Err(e) = apply_overrides(&mut cfg, &cli) {
        eprintln!("error: {}", e);
        return 1;
    }
    let outcome = match cli.command {
        Command::MetaTrain => run_meta_train(&cfg, &cli).map(|()| true),
        Command::Eval => run_eval(&cfg),
        Command::Sweep => run_sweep(&cfg),
        Command::Inspect => run_inspect(&cfg).map(|()| true),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("error: more than 10% of cells failed");
            1
        }
        Err(e) => {
            eprintln!("error: {}", e);
            1
        }
    }
}
