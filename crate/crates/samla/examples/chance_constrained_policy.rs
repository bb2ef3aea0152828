//! Solves one chance-constrained acquisition step on a damaged aircraft and
//! Monte-Carlo checks that executing the plan under the true dynamics lands
//! inside the sphere of safety.
//!
//!     cargo run --example chance_constrained_policy

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samla::acquisition::{AcquisitionParams, History};
use samla::ensemble::{linearize, train_ensemble, EnsembleConfig, TransitionSample};
use samla::envs::{aircraft_step, default_safety_spec, sample_damage, AircraftConfig};
use samla::policy::{solve_policy, PolicyConfig};
use samla::seed::derive_seed;
use samla::tensor::Tensor;

fn main() {
    let cfg = AircraftConfig { state_dim: 3, action_dim: 2, ..AircraftConfig::default() };
    let truth = sample_damage(5, &cfg).expect("valid config");

    // Short exploratory rollout to fit the model.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut x = Tensor::zeros(vec![cfg.state_dim]);
    let mut history = History::new(cfg.state_dim, cfg.action_dim);
    let mut data = Vec::new();
    for k in 0..12 {
        let u = Tensor::from_vec(
            vec![cfg.action_dim],
            (0..cfg.action_dim).map(|_| rng.gen_range(-0.3..0.3)).collect(),
        )
        .unwrap();
        let next = aircraft_step(&truth, &x, &u, derive_seed(77, k)).expect("in box");
        let sample = TransitionSample::new(x.clone(), u.clone(), next.clone());
        history.push(sample.clone()).unwrap();
        data.push(sample);
        x = next;
    }
    let ens = train_ensemble(&data, &EnsembleConfig::default(), 3).expect("enough samples");
    let lin = linearize(&ens, &x, &Tensor::zeros(vec![cfg.action_dim])).expect("linearizable");

    // Two-step return window; the plan covers the whole window.
    let mut spec = default_safety_spec(cfg.state_dim, cfg.action_dim, cfg.action_limit);
    spec.horizon = 2;
    let mut acq_rng = ChaCha8Rng::seed_from_u64(11);
    let acq = AcquisitionParams::init(cfg.state_dim, cfg.action_dim, 2, 6, 4, (8, 8), &mut acq_rng);
    let mut pcfg = PolicyConfig::new(1.0, 100.0);
    pcfg.commit_horizon = true;
    pcfg.baseline_seed = 99;

    let (plan, diag) = solve_policy(&acq, &history, &lin, &x, &spec, &pcfg).expect("feasible");
    println!("status {:?}, nodes {}, solve {:.1} ms", diag.status, diag.nodes, diag.solve_ms);
    println!(
        "q = {:.4} against baseline {:.4} (objective rewards the difference)",
        diag.q_value, diag.q_baseline
    );
    println!("slack used {:.2e}", diag.slack_total);
    for t in 0..2 {
        let u = &plan.data()[t * cfg.action_dim..(t + 1) * cfg.action_dim];
        println!("step {} action {:?}", t + 1, u);
    }

    // Roll the committed plan under the true dynamics many times; the
    // chance constraint was built from the model, so the hit rate shows how
    // conservative the bootstrap spread is.
    let trials: u64 = 2000;
    let mut inside = 0;
    for trial in 0..trials {
        let mut xi = x.clone();
        for t in 0..2 {
            let u = Tensor::from_vec(
                vec![cfg.action_dim],
                plan.data()[t * cfg.action_dim..(t + 1) * cfg.action_dim].to_vec(),
            )
            .unwrap();
            xi = aircraft_step(&truth, &xi, &u, derive_seed(1234, trial * 2 + t as u64))
                .expect("in box");
        }
        let ok = (0..cfg.state_dim)
            .all(|d| (xi.get(d) - spec.x_ref.get(d)).abs() <= spec.radius.get(d));
        if ok {
            inside += 1;
        }
    }
    let rate = inside as f64 / trials as f64;
    let eps_total: f64 = spec.epsilon.data().iter().sum();
    println!(
        "\nreturned inside the sphere in {:.1}% of {} rollouts (target at least {:.1}%)",
        100.0 * rate,
        trials,
        100.0 * (1.0 - eps_total)
    );
}
