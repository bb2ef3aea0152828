//! Comparison acquisition strategies: epistemic uncertainty, action
//! diversity, safe Bayesian optimization, and uniform random. Each
//! selector returns an index into the candidate set; candidates are
//! generated inside the action box, so box compliance is structural.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acquisition::History;
use crate::ensemble::{DynamicsEnsemble, EnsembleError};
use crate::envs::{fit_gp, gp_posterior, EnvError, GpHyper};
use crate::nn::mlp_forward;
use crate::policy::{gaussian_quantile, normal_cdf, PolicyError};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineError {
    EmptyCandidates,
    EmptyGrid,
    NoObservations,
    BadEpsilon { epsilon: f64 },
    Ensemble(EnsembleError),
    Env(EnvError),
}

impl fmt::Display for BaselineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineError::EmptyCandidates => write!(f, "candidate set is empty"),
            BaselineError::EmptyGrid => write!(f, "amplitude grid is empty"),
            BaselineError::NoObservations => write!(f, "need at least one observation"),
            BaselineError::BadEpsilon { epsilon } => {
                write!(f, "epsilon {} outside (0, 0.5]", epsilon)
            }
            BaselineError::Ensemble(e) => write!(f, "{}", e),
            BaselineError::Env(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for BaselineError {}

impl From<EnsembleError> for BaselineError {
    fn from(e: EnsembleError) -> Self {
        BaselineError::Ensemble(e)
    }
}

impl From<EnvError> for BaselineError {
    fn from(e: EnvError) -> Self {
        BaselineError::Env(e)
    }
}

/// Picks the candidate whose member predictions disagree the most: argmax
/// of the trace of the member-prediction covariance at (x_t, candidate).
/// Ties go to the lowest index.
pub fn epistemic_select(
    ens: &DynamicsEnsemble,
    x_t: &Tensor,
    candidates: &[Tensor],
) -> Result<usize, BaselineError> {
    if candidates.is_empty() {
        return Err(BaselineError::EmptyCandidates);
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, u) in candidates.iter().enumerate() {
        let input = Tensor::concat(&[x_t, u]);
        let mut preds = Vec::with_capacity(ens.members.len());
        for member in &ens.members {
            let (out, _) = mlp_forward(member, &input)
                .map_err(|e| BaselineError::Ensemble(EnsembleError::from(e)))?;
            preds.push(out);
        }
        let b = preds.len() as f64;
        let mut trace = 0.0;
        for d in 0..ens.state_dim {
            let mean = preds.iter().map(|p| p.get(d)).sum::<f64>() / b;
            trace += preds.iter().map(|p| (p.get(d) - mean).powi(2)).sum::<f64>() / b;
        }
        if trace > best.1 {
            best = (i, trace);
        }
    }
    Ok(best.0)
}

/// Picks the candidate farthest (in minimum Euclidean distance) from every
/// previously executed action. An empty history defaults to the first
/// candidate.
pub fn diversity_select(history: &History, candidates: &[Tensor]) -> Result<usize, BaselineError> {
    if candidates.is_empty() {
        return Err(BaselineError::EmptyCandidates);
    }
    if history.is_empty() {
        return Ok(0);
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, u) in candidates.iter().enumerate() {
        let mut nearest = f64::INFINITY;
        for s in history.samples() {
            let d: f64 = (0..u.len()).map(|k| (u.get(k) - s.action.get(k)).powi(2)).sum();
            nearest = nearest.min(d.sqrt());
        }
        if nearest > best.1 {
            best = (i, nearest);
        }
    }
    Ok(best.0)
}

/// GP hyperparameters for the BO baseline; tuned to the unit amplitude
/// sweep and its observation noise.
/// GP hyperparameters shared by the BO baseline and any agent-side score
/// model, so policy comparisons run on the same posterior.
pub const BO_HYPER: GpHyper = GpHyper { lengthscale: 0.12, signal_var: 1.0, noise_var: 2.5e-3 };
const EI_XI: f64 = 0.01;

fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let gap = mean - best - EI_XI;
    if std <= 1e-12 {
        return gap.max(0.0);
    }
    let z = gap / std;
    let pdf = (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    gap * normal_cdf(z) + std * pdf
}

/// Safe Bayesian optimization over the amplitude grid: fit a GP to the
/// scores, keep grid points whose posterior stays nonnegative with
/// probability 1 - epsilon, then take the highest expected improvement
/// over the best observed score. If nothing is safe, the point with the
/// largest safety margin wins. Returns a grid index.
pub fn bo_select(
    observations: &[(f64, f64)],
    grid: &Tensor,
    epsilon: f64,
) -> Result<usize, BaselineError> {
    if grid.is_empty() {
        return Err(BaselineError::EmptyGrid);
    }
    if observations.is_empty() {
        return Err(BaselineError::NoObservations);
    }
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(BaselineError::BadEpsilon { epsilon });
    }
    let quant = match gaussian_quantile(1.0 - epsilon) {
        Ok(q) => q,
        Err(PolicyError::QuantileDomain { p }) => {
            return Err(BaselineError::BadEpsilon { epsilon: 1.0 - p })
        }
        Err(_) => unreachable!("quantile only fails on domain"),
    };
    let xs = Tensor::vector(observations.iter().map(|o| o.0).collect());
    let ys = Tensor::vector(observations.iter().map(|o| o.1).collect());
    let gp = fit_gp(&xs, &ys, &BO_HYPER)?;
    let best_seen = observations.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);

    let mut best_ei = (None::<usize>, f64::NEG_INFINITY);
    let mut best_margin = (0usize, f64::NEG_INFINITY);
    for i in 0..grid.len() {
        let (mean, std) = gp_posterior(&gp, grid.get(i));
        let margin = mean - quant * std;
        if margin > best_margin.1 {
            best_margin = (i, margin);
        }
        if margin >= 0.0 {
            let ei = expected_improvement(mean, std, best_seen);
            if ei > best_ei.1 {
                best_ei = (Some(i), ei);
            }
        }
    }
    Ok(best_ei.0.unwrap_or(best_margin.0))
}

/// Uniform choice among candidates, deterministic per seed.
pub fn random_select<T>(candidates: &[T], seed: u64) -> Result<usize, BaselineError> {
    if candidates.is_empty() {
        return Err(BaselineError::EmptyCandidates);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rng.gen_range(0..candidates.len()))
}

/// Latin-hypercube sample of `n` points inside the box: each dimension is
/// split into n strata, visited once each in shuffled order.
pub fn latin_hypercube(bounds: &[(f64, f64)], n: usize, seed: u64) -> Vec<Tensor> {
    let dims = bounds.len();
    let mut coords: Vec<Vec<f64>> = Vec::with_capacity(dims);
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, d as u64));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let col: Vec<f64> = order
            .into_iter()
            .map(|stratum| {
                let frac = (stratum as f64 + rng.gen_range(0.0..1.0)) / n as f64;
                lo + (hi - lo) * frac
            })
            .collect();
        coords.push(col);
    }
    (0..n)
        .map(|i| Tensor::vector((0..dims).map(|d| coords[d][i]).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::TransitionSample;
    use crate::nn::{Activation, MlpParams};

    fn tiny_ensemble(members: Vec<MlpParams>) -> DynamicsEnsemble {
        DynamicsEnsemble { members, eval_set: Vec::new(), state_dim: 1, action_dim: 1 }
    }

    fn linear_member(w_x: f64, w_u: f64, b: f64) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = MlpParams::init(&[2, 1], &[Activation::Identity], &mut rng);
        m.layers[0].weight = Tensor::from_vec(vec![1, 2], vec![w_x, w_u]).unwrap();
        m.layers[0].bias = Tensor::vector(vec![b]);
        m
    }

    #[test]
    fn identical_members_tie_to_the_first_candidate() {
        let ens = tiny_ensemble(vec![linear_member(1.0, 1.0, 0.0); 3]);
        let candidates: Vec<Tensor> =
            [0.2, 0.5, 0.9].iter().map(|&u| Tensor::vector(vec![u])).collect();
        let pick = epistemic_select(&ens, &Tensor::vector(vec![0.0]), &candidates).unwrap();
        assert_eq!(pick, 0);
    }

    #[test]
    fn disagreement_at_one_candidate_selects_it() {
        // Members differ only in the action weight, so spread grows with
        // |u|; the largest-magnitude candidate must win.
        let ens = tiny_ensemble(vec![linear_member(1.0, 0.5, 0.0), linear_member(1.0, 1.5, 0.0)]);
        let candidates: Vec<Tensor> =
            [0.1, -0.9, 0.4].iter().map(|&u| Tensor::vector(vec![u])).collect();
        let pick = epistemic_select(&ens, &Tensor::vector(vec![0.3]), &candidates).unwrap();
        assert_eq!(pick, 1);
    }

    #[test]
    fn duplicated_candidates_keep_the_first_occurrence() {
        let ens = tiny_ensemble(vec![linear_member(1.0, 0.5, 0.0), linear_member(1.0, 1.5, 0.0)]);
        let candidates: Vec<Tensor> =
            [0.7, 0.7, 0.7].iter().map(|&u| Tensor::vector(vec![u])).collect();
        let pick = epistemic_select(&ens, &Tensor::vector(vec![0.0]), &candidates).unwrap();
        assert_eq!(pick, 0);
    }

    #[test]
    fn epistemic_rejects_empty_candidates() {
        let ens = tiny_ensemble(vec![linear_member(1.0, 1.0, 0.0)]);
        assert_eq!(
            epistemic_select(&ens, &Tensor::vector(vec![0.0]), &[]),
            Err(BaselineError::EmptyCandidates)
        );
    }

    fn history_with_actions(actions: &[f64]) -> History {
        let mut h = History::new(1, 1);
        for &a in actions {
            h.push(TransitionSample::new(
                Tensor::vector(vec![0.0]),
                Tensor::vector(vec![a]),
                Tensor::vector(vec![0.0]),
            ))
            .unwrap();
        }
        h
    }

    #[test]
    fn empty_history_defaults_to_first_candidate() {
        let candidates = vec![Tensor::vector(vec![0.4]), Tensor::vector(vec![0.9])];
        assert_eq!(diversity_select(&History::new(1, 1), &candidates).unwrap(), 0);
    }

    #[test]
    fn diversity_moves_away_from_seen_actions() {
        let history = history_with_actions(&[0.0]);
        let candidates = vec![Tensor::vector(vec![0.1]), Tensor::vector(vec![0.9])];
        assert_eq!(diversity_select(&history, &candidates).unwrap(), 1);
    }

    #[test]
    fn diversity_matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let past: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let history = history_with_actions(&past);
            let cands: Vec<Tensor> =
                (0..8).map(|_| Tensor::vector(vec![rng.gen_range(-1.0..1.0)])).collect();
            let pick = diversity_select(&history, &cands).unwrap();
            let mut want = (0usize, f64::NEG_INFINITY);
            for (i, c) in cands.iter().enumerate() {
                let nearest = past
                    .iter()
                    .map(|&p| (c.get(0) - p).abs())
                    .fold(f64::INFINITY, f64::min);
                if nearest > want.1 {
                    want = (i, nearest);
                }
            }
            assert_eq!(pick, want.0);
        }
    }

    #[test]
    fn bo_explores_away_from_a_single_safe_observation() {
        let grid = Tensor::vector((0..25).map(|i| i as f64 / 24.0).collect());
        let pick = bo_select(&[(0.3, 0.5)], &grid, 0.5).unwrap();
        let a = grid.get(pick);
        assert!((a - 0.3).abs() > 0.1, "picked {} next to the incumbent", a);
    }

    #[test]
    fn bo_never_prefers_the_incumbent_over_positive_ei() {
        // At eps = 0.5 safety filters on the mean only; the training point
        // has EI ~ 0 while distant safe points keep positive EI.
        let grid = Tensor::vector((0..25).map(|i| i as f64 / 24.0).collect());
        let incumbent_idx = 6; // 0.25
        let obs = [(0.25, 0.8)];
        let pick = bo_select(&obs, &grid, 0.5).unwrap();
        assert_ne!(pick, incumbent_idx);
    }

    #[test]
    fn bo_falls_back_to_margin_when_everything_is_unsafe() {
        let grid = Tensor::vector((0..11).map(|i| i as f64 / 10.0).collect());
        // Strongly negative scores leave no safe point; the least-bad
        // margin is near the data with the highest (least negative) mean.
        let obs = [(0.0, -2.0), (0.5, -1.0), (1.0, -3.0)];
        let pick = bo_select(&obs, &grid, 0.1).unwrap();
        let q = gaussian_quantile(0.9).unwrap();
        let xs = Tensor::vector(obs.iter().map(|o| o.0).collect());
        let ys = Tensor::vector(obs.iter().map(|o| o.1).collect());
        let gp = fit_gp(&xs, &ys, &BO_HYPER).unwrap();
        let margins: Vec<f64> = (0..grid.len())
            .map(|i| {
                let (m, s) = gp_posterior(&gp, grid.get(i));
                m - q * s
            })
            .collect();
        assert!(margins.iter().all(|&m| m < 0.0), "construction: all unsafe");
        let want = margins
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(pick, want);
    }

    #[test]
    fn bo_rejects_degenerate_inputs() {
        let grid = Tensor::vector(vec![0.0, 1.0]);
        assert_eq!(bo_select(&[], &grid, 0.1), Err(BaselineError::NoObservations));
        assert_eq!(
            bo_select(&[(0.0, 0.0)], &Tensor::vector(vec![]), 0.1),
            Err(BaselineError::EmptyGrid)
        );
        assert!(matches!(
            bo_select(&[(0.0, 0.0)], &grid, 0.7),
            Err(BaselineError::BadEpsilon { .. })
        ));
    }

    #[test]
    fn random_select_is_deterministic_and_uniformish() {
        let candidates: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert_eq!(random_select(&candidates, 5).unwrap(), random_select(&candidates, 5).unwrap());
        assert_eq!(random_select(&candidates[..1], 123).unwrap(), 0);
        let mut counts = [0usize; 8];
        let n = 10_000;
        for seed in 0..n {
            counts[random_select(&candidates, seed).unwrap()] += 1;
        }
        let expect = n as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // df = 7; 24.3 is the 99.9th percentile.
        assert!(chi2 < 24.3, "chi2 {}", chi2);
        assert_eq!(random_select::<f64>(&[], 0), Err(BaselineError::EmptyCandidates));
    }

    #[test]
    fn latin_hypercube_stratifies_every_dimension() {
        let bounds = [(-1.0, 1.0), (0.0, 4.0)];
        let pts = latin_hypercube(&bounds, 16, 9);
        assert_eq!(pts.len(), 16);
        assert_eq!(pts, latin_hypercube(&bounds, 16, 9));
        for d in 0..2 {
            let (lo, hi) = bounds[d];
            let mut seen = vec![false; 16];
            for p in &pts {
                let v = p.get(d);
                assert!(v >= lo && v <= hi);
                let stratum = (((v - lo) / (hi - lo)) * 16.0).floor() as usize;
                assert!(!seen[stratum.min(15)], "dim {} stratum {} hit twice", d, stratum);
                seen[stratum.min(15)] = true;
            }
        }
    }
}
