//! Evaluation domains: damaged linear "aircraft" systems and synthetic
//! ADMETS subjects built on a 1-D Gaussian-process score surrogate.

use std::fmt;

mod admets;
mod aircraft;
mod gp;

pub use admets::{admets_step, admets_subject, optimum_error, AdmetsObservation, AdmetsSubject};
pub use aircraft::{
    aircraft_step, default_safety_spec, sample_damage, spectral_radius_bound, AircraftConfig,
    AircraftParams,
};
pub use gp::{fit_gp, gp_posterior, GpHyper, GpModel};

#[derive(Debug, Clone, PartialEq)]
pub enum EnvError {
    /// Actuator limits are part of the environment, not a suggestion.
    ActionOutOfBox { index: usize },
    AmplitudeOutOfRange { amplitude: f64 },
    /// Kernel matrix stayed indefinite even after the 1e-8 jitter.
    NotPositiveDefinite,
    Dim { what: &'static str, expected: usize, got: usize },
    BadConfig { what: &'static str },
    /// Subject rejection sampling ran out of attempts.
    DegenerateSubject { seed: u64 },
}

impl fmt::Display for EnvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvError::ActionOutOfBox { index } => {
                write!(f, "action component {} exceeds the actuator box", index)
            }
            EnvError::AmplitudeOutOfRange { amplitude } => {
                write!(f, "amplitude {} is outside the sweep range", amplitude)
            }
            EnvError::NotPositiveDefinite => {
                write!(f, "kernel matrix is not positive definite after jitter")
            }
            EnvError::Dim { what, expected, got } => {
                write!(f, "{}: expected dim {}, got {}", what, expected, got)
            }
            EnvError::BadConfig { what } => write!(f, "bad env config: {}", what),
            EnvError::DegenerateSubject { seed } => {
                write!(f, "could not draw a usable subject from seed {}", seed)
            }
        }
    }
}

impl std::error::Error for EnvError {}

/// Box-Muller standard normal. `rand` ships no Gaussian; this is the one
/// place we roll it so every consumer shares the exact stream semantics.
pub(crate) fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
