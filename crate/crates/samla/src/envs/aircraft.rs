//! Damaged linear state-space aircraft. The nominal system is a chain of
//! lightly coupled, lightly damped rotation blocks; damage scales away
//! control authority and jitters the state matrix, then the result is
//! projected back under the spectral-radius cap.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{standard_normal, EnvError};
use crate::policy::SafetySpec;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AircraftConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Relative jitter applied to each nonzero A entry, in [0, a_perturb].
    pub a_perturb: f64,
    /// Damaged B columns are scaled by a factor drawn from this range.
    pub b_scale_lo: f64,
    pub b_scale_hi: f64,
    /// Per-dimension process noise std.
    pub noise_std: f64,
    /// Symmetric actuator box, |u_j| <= action_limit.
    pub action_limit: f64,
}

impl Default for AircraftConfig {
    fn default() -> Self {
        AircraftConfig {
            state_dim: 6,
            action_dim: 4,
            a_perturb: 0.2,
            b_scale_lo: 0.0,
            b_scale_hi: 0.7,
            noise_std: 0.02,
            action_limit: 1.0,
        }
    }
}

impl AircraftConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.state_dim < 2 || self.state_dim > 12 {
            return Err(EnvError::BadConfig { what: "state_dim must be in 2..=12" });
        }
        if self.action_dim == 0 {
            return Err(EnvError::BadConfig { what: "action_dim must be positive" });
        }
        if !(0.0..=1.0).contains(&self.a_perturb) {
            return Err(EnvError::BadConfig { what: "a_perturb must be in [0, 1]" });
        }
        if !(self.b_scale_lo.is_finite() && self.b_scale_hi.is_finite())
            || self.b_scale_lo < 0.0
            || self.b_scale_lo > self.b_scale_hi
        {
            return Err(EnvError::BadConfig { what: "b scale range must be ordered and nonnegative" });
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(EnvError::BadConfig { what: "noise_std must be nonnegative" });
        }
        if !(self.action_limit > 0.0) || !self.action_limit.is_finite() {
            return Err(EnvError::BadConfig { what: "action_limit must be positive" });
        }
        Ok(())
    }

    /// Undamaged (A0, B0). Rotation pairs with decreasing damping plus a
    /// weak superdiagonal chain; actuators each drive one pair with a
    /// small dense spillover so the pair (B, AB) spans the state space.
    pub fn nominal(&self) -> (Tensor, Tensor) {
        let (d, j) = (self.state_dim, self.action_dim);
        let mut a = Tensor::zeros(vec![d, d]);
        let mut pair = 0;
        while 2 * pair + 1 < d {
            let rho = 0.97 - 0.015 * pair as f64;
            let theta = 0.25 + 0.2 * pair as f64;
            let (i0, i1) = (2 * pair, 2 * pair + 1);
            a.set2(i0, i0, rho * theta.cos());
            a.set2(i0, i1, rho * theta.sin());
            a.set2(i1, i0, -rho * theta.sin());
            a.set2(i1, i1, rho * theta.cos());
            pair += 1;
        }
        if d % 2 == 1 {
            a.set2(d - 1, d - 1, 0.95);
        }
        for i in 0..d - 1 {
            a.set2(i, i + 1, a.get2(i, i + 1) + 0.02);
        }
        let mut b = Tensor::zeros(vec![d, j]);
        for jj in 0..j {
            b.set2((2 * jj) % d, jj, 1.0);
            b.set2((2 * jj + 1) % d, jj, 0.5);
        }
        for i in 0..d {
            for jj in 0..j {
                let spill = 0.05 * (((i * 7 + jj * 3) % 5) as f64 - 2.0);
                b.set2(i, jj, b.get2(i, jj) + spill);
            }
        }
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AircraftParams {
    pub a_true: Tensor,
    pub b_true: Tensor,
    pub c_true: Tensor,
    pub noise_std: Tensor,
    pub action_limit: f64,
}

impl AircraftParams {
    pub fn state_dim(&self) -> usize {
        self.c_true.len()
    }

    pub fn action_dim(&self) -> usize {
        self.b_true.cols()
    }
}

/// Upper bound on the spectral radius via Gelfand: `||A^(2^12)||_F^(1/4096)`,
/// computed with normalized squarings so nothing overflows. Never smaller
/// than the true radius, so projecting with it is always safe.
pub fn spectral_radius_bound(a: &Tensor) -> f64 {
    let n = a.rows();
    let frob = |m: &Tensor| m.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut m = a.clone();
    let mut log_scale = 0.0_f64;
    for _ in 0..12 {
        let norm = frob(&m);
        if norm == 0.0 {
            return 0.0;
        }
        m.scale(1.0 / norm);
        log_scale = 2.0 * (log_scale + norm.ln());
        m = m.matmul(&m).expect("square matrix");
    }
    let _ = n;
    ((log_scale + frob(&m).ln()) / 4096.0).exp()
}

// Damaged yet flyable: the open loop stays (marginally) stable, so a
// return plan always exists for some action sequence.
const SPECTRAL_CAP: f64 = 0.99;

/// Draws one damaged system: 1-2 of B's columns scaled by a factor from
/// the configured range, every A entry jittered by up to +-a_perturb of
/// itself, then A rescaled if the radius bound exceeds the stability cap.
/// Deterministic per seed.
pub fn sample_damage(seed: u64, cfg: &AircraftConfig) -> Result<AircraftParams, EnvError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut b) = cfg.nominal();
    let (d, j) = (cfg.state_dim, cfg.action_dim);

    let hit = rng.gen_range(1..=2.min(j));
    let cols: Vec<usize> = (0..j).collect();
    let damaged: Vec<usize> = cols.choose_multiple(&mut rng, hit).copied().collect();
    for &col in &damaged {
        let factor = rng.gen_range(cfg.b_scale_lo..=cfg.b_scale_hi);
        for i in 0..d {
            b.set2(i, col, b.get2(i, col) * factor);
        }
    }
    for i in 0..d {
        for k in 0..d {
            let jitter = rng.gen_range(-cfg.a_perturb..=cfg.a_perturb);
            a.set2(i, k, a.get2(i, k) * (1.0 + jitter));
        }
    }
    let bound = spectral_radius_bound(&a);
    if bound > SPECTRAL_CAP {
        a.scale(SPECTRAL_CAP / bound);
    }
    Ok(AircraftParams {
        a_true: a,
        b_true: b,
        c_true: Tensor::zeros(vec![d]),
        noise_std: Tensor::from_vec(vec![d], vec![cfg.noise_std; d]).expect("finite std"),
        action_limit: cfg.action_limit,
    })
}

/// `x' = A x + B u + c + noise_std * N(0, 1)`, deterministic per
/// noise_seed. Actions outside the actuator box are refused.
pub fn aircraft_step(
    params: &AircraftParams,
    x: &Tensor,
    u: &Tensor,
    noise_seed: u64,
) -> Result<Tensor, EnvError> {
    let d = params.state_dim();
    let j = params.action_dim();
    if x.len() != d {
        return Err(EnvError::Dim { what: "aircraft_step state", expected: d, got: x.len() });
    }
    if u.len() != j {
        return Err(EnvError::Dim { what: "aircraft_step action", expected: j, got: u.len() });
    }
    for i in 0..j {
        if u.get(i).abs() > params.action_limit + 1e-9 {
            return Err(EnvError::ActionOutOfBox { index: i });
        }
    }
    let mut next = params.a_true.matvec(x).expect("validated dims");
    next.axpy(1.0, &params.b_true.matvec(u).expect("validated dims"));
    next.axpy(1.0, &params.c_true);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    for i in 0..d {
        let s = params.noise_std.get(i);
        if s > 0.0 {
            next.set(i, next.get(i) + s * standard_normal(&mut rng));
        }
    }
    Ok(next)
}

/// Sphere of safety at the trim point: unit radius per normalized state
/// dimension, eps 0.05, two-step return window.
pub fn default_safety_spec(state_dim: usize, action_dim: usize, action_limit: f64) -> SafetySpec {
    SafetySpec {
        x_ref: Tensor::zeros(vec![state_dim]),
        radius: Tensor::from_vec(vec![state_dim], vec![1.0; state_dim]).expect("finite"),
        epsilon: Tensor::from_vec(vec![state_dim], vec![0.05; state_dim]).expect("finite"),
        horizon: 2,
        action_lo: Tensor::from_vec(vec![action_dim], vec![-action_limit; action_dim]).expect("finite"),
        action_hi: Tensor::from_vec(vec![action_dim], vec![action_limit; action_dim]).expect("finite"),
    }
}
