//! Synthetic ADMETS subjects: a random smooth discrimination-score curve
//! over stimulation amplitude, served through a GP surrogate. Scores below
//! zero mark the seizure-side-effect region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fit_gp, gp_posterior, standard_normal, EnvError, GpHyper, GpModel};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

pub const GRID_POINTS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct AdmetsSubject {
    /// Truth surrogate: amplitude -> discrimination score.
    pub gp: GpModel,
    /// 25-point amplitude sweep in [0, 1].
    pub grid: Tensor,
    /// Grid argmax of the true mean.
    pub a_star: f64,
    pub noise_std: f64,
}

impl AdmetsSubject {
    pub fn true_mean(&self, amplitude: f64) -> f64 {
        gp_posterior(&self.gp, amplitude).0
    }

    pub fn span(&self) -> f64 {
        self.grid.get(self.grid.len() - 1) - self.grid.get(0)
    }
}

/// Draws a subject whose curve starts safe at zero amplitude, peaks above
/// 0.2 somewhere, and dips below zero somewhere else. Candidate curves are
/// sums of 2-4 positive bumps and one negative dip; draws failing the
/// shape requirements are rejected and redrawn deterministically.
pub fn admets_subject(seed: u64) -> Result<AdmetsSubject, EnvError> {
    let grid: Vec<f64> =
        (0..GRID_POINTS).map(|i| i as f64 / (GRID_POINTS - 1) as f64).collect();
    let hyper = GpHyper { lengthscale: 0.1, signal_var: 1.0, noise_var: 1e-6 };
    for attempt in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt));
        let bumps = rng.gen_range(2..=4usize);
        let mut parts: Vec<(f64, f64, f64)> = Vec::with_capacity(bumps + 1);
        for b in 0..bumps {
            let height = rng.gen_range(0.3..=1.0);
            // First bump hugs the low-amplitude end so a=0 tends to be safe.
            let center = if b == 0 { rng.gen_range(0.0..=0.25) } else { rng.gen_range(0.0..=1.0) };
            let width = rng.gen_range(0.1..=0.3);
            parts.push((height, center, width));
        }
        let dip_height = rng.gen_range(0.8..=1.5);
        let dip_center = rng.gen_range(0.3..=0.9);
        let dip_width = rng.gen_range(0.05..=0.12);
        parts.push((-dip_height, dip_center, dip_width));

        let curve = |a: f64| -> f64 {
            parts
                .iter()
                .map(|&(h, c, w)| h * (-(a - c) * (a - c) / (2.0 * w * w)).exp())
                .sum()
        };
        let values: Vec<f64> = grid.iter().map(|&a| curve(a)).collect();
        let gp = fit_gp(&Tensor::vector(grid.clone()), &Tensor::vector(values), &hyper)?;
        let means: Vec<f64> = grid.iter().map(|&a| gp_posterior(&gp, a).0).collect();
        let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if means[0] > 0.1 && min < -0.05 && max > 0.2 {
            let best = means
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("nonempty grid");
            return Ok(AdmetsSubject {
                gp,
                grid: Tensor::vector(grid),
                a_star: (best as f64) / (GRID_POINTS - 1) as f64,
                noise_std: 0.05,
            });
        }
    }
    Err(EnvError::DegenerateSubject { seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmetsObservation {
    /// True mean plus observation noise.
    pub score: f64,
    pub true_mean: f64,
    /// Ground truth: the true mean dipped below zero.
    pub side_effect: bool,
}

/// Applies one stimulation and reads the noisy score. Deterministic per
/// seed; amplitudes outside the sweep range are refused.
pub fn admets_step(
    subject: &AdmetsSubject,
    amplitude: f64,
    seed: u64,
) -> Result<AdmetsObservation, EnvError> {
    let lo = subject.grid.get(0);
    let hi = subject.grid.get(subject.grid.len() - 1);
    if !amplitude.is_finite() || amplitude < lo - 1e-9 || amplitude > hi + 1e-9 {
        return Err(EnvError::AmplitudeOutOfRange { amplitude });
    }
    let true_mean = subject.true_mean(amplitude);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let score = true_mean + subject.noise_std * standard_normal(&mut rng);
    Ok(AdmetsObservation { score, true_mean, side_effect: true_mean < 0.0 })
}

/// |estimate - a*| scaled by the sweep span, so 1.0 means "as wrong as the
/// grid allows".
pub fn optimum_error(subject: &AdmetsSubject, estimate: f64) -> f64 {
    (estimate - subject.a_star).abs() / subject.span()
}
