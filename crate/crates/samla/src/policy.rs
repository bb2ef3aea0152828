//! Chance-constrained action selection over the linearized dynamics.
//!
//! The solver assembles one MILP per decision: T-step mean propagation of
//! the point linearization, per-dimension Gaussian chance constraints with
//! the uncertainty norm bounded by its L1 sum, slack relaxation, and the
//! encoded Q head as the information objective. A grid-enumeration variant
//! covers one-dimensional candidate sets where a MILP is overkill.

use std::fmt;
use std::time::Instant;

use crate::acquisition::{
    encode_context, q_baseline, q_forward, AcqError, AcquisitionParams, History,
};
use crate::ensemble::Linearization;
use crate::milp::{
    bb_solve_with_limit, encode_abs, encode_q_network, LinExpr, MilpError, MilpModel, Sense,
    SolveStatus,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyError {
    BadSpec { what: &'static str },
    /// Quantile argument outside (0, 1).
    QuantileDomain { p: f64 },
    /// Chance constraints need a finite action box.
    UnboundedActions,
    EmptyGrid,
    /// The solver returned a status the slack relaxation rules out.
    Internal { what: String },
    Milp(MilpError),
    Acq(AcqError),
}

impl fmt::Display for PolicyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyError::BadSpec { what } => write!(f, "bad policy spec: {}", what),
            PolicyError::QuantileDomain { p } => {
                write!(f, "quantile argument {} outside (0, 1)", p)
            }
            PolicyError::UnboundedActions => write!(f, "action box must be finite"),
            PolicyError::EmptyGrid => write!(f, "candidate grid is empty"),
            PolicyError::Internal { what } => write!(f, "internal policy error: {}", what),
            PolicyError::Milp(e) => write!(f, "{}", e),
            PolicyError::Acq(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for PolicyError {}

impl From<MilpError> for PolicyError {
    fn from(e: MilpError) -> Self {
        PolicyError::Milp(e)
    }
}

impl From<AcqError> for PolicyError {
    fn from(e: AcqError) -> Self {
        PolicyError::Acq(e)
    }
}

impl From<crate::tensor::TensorError> for PolicyError {
    fn from(e: crate::tensor::TensorError) -> Self {
        PolicyError::Internal { what: e.to_string() }
    }
}

/// Standard normal CDF, accurate to ~1e-14 absolute over the useful range.
/// Small arguments go through the erf Taylor series; tails through the
/// Legendre continued fraction for erfc, so relative accuracy survives far
/// into the tail.
pub fn normal_cdf(x: f64) -> f64 {
    // Phi(x) = erfc(-x / sqrt(2)) / 2.
    let z = -x / std::f64::consts::SQRT_2;
    0.5 * erfc(z)
}

fn erfc(z: f64) -> f64 {
    if z < 0.0 {
        return 2.0 - erfc(-z);
    }
    if z <= 2.0 {
        1.0 - erf_series(z)
    } else {
        erfc_continued_fraction(z)
    }
}

/// erf via its alternating Taylor series. Fine up to |z| ~ 2 where the
/// cancellation stays below ~e^4 ulps.
fn erf_series(z: f64) -> f64 {
    let zz = z * z;
    let mut term = z;
    let mut sum = 0.0;
    for n in 0..200 {
        let add = term / (2 * n + 1) as f64;
        sum += add;
        term *= -zz / (n + 1) as f64;
        if add.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

/// sqrt(pi) e^{z^2} erfc(z) = 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...)))),
/// evaluated backward at fixed depth. Converges fast for z > 2.
fn erfc_continued_fraction(z: f64) -> f64 {
    let mut tail = 0.0;
    for n in (1..=150).rev() {
        tail = (n as f64 / 2.0) / (z + tail);
    }
    let frac = 1.0 / (z + tail);
    frac * (-z * z).exp() / std::f64::consts::PI.sqrt()
}

/// Inverse standard normal CDF to absolute error well under 1e-9: the
/// Acklam rational approximation followed by one Halley step against
/// [`normal_cdf`].
pub fn gaussian_quantile(p: f64) -> Result<f64, PolicyError> {
    if !p.is_finite() || p <= 0.0 || p >= 1.0 {
        return Err(PolicyError::QuantileDomain { p });
    }
    let x = acklam(p);
    if x.abs() > 8.0 {
        // exp(x^2/2) in the Halley step would lose precision out here and
        // the raw approximation is already far below any usable tolerance.
        return Ok(x);
    }
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    Ok(x - u / (1.0 + x * u / 2.0))
}

fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Sphere of safety: the policy must return the state to within `radius`
/// of `x_ref` (per dimension, probability 1 - epsilon_d) after `horizon`
/// steps, using actions inside the box.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySpec {
    pub x_ref: Tensor,
    pub radius: Tensor,
    pub epsilon: Tensor,
    pub horizon: usize,
    pub action_lo: Tensor,
    pub action_hi: Tensor,
}

impl SafetySpec {
    pub fn state_dim(&self) -> usize {
        self.x_ref.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_lo.len()
    }

    /// Per-action-dimension (lo, hi) pairs.
    pub fn action_box(&self) -> Vec<(f64, f64)> {
        (0..self.action_dim()).map(|j| (self.action_lo.get(j), self.action_hi.get(j))).collect()
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let d = self.x_ref.len();
        if self.x_ref.shape().len() != 1 || d == 0 || !self.x_ref.all_finite() {
            return Err(PolicyError::BadSpec { what: "x_ref must be a finite vector" });
        }
        if self.radius.shape() != self.x_ref.shape()
            || self.radius.data().iter().any(|&r| !(r > 0.0) || !r.is_finite())
        {
            return Err(PolicyError::BadSpec { what: "radius must be positive, finite, length D" });
        }
        if self.epsilon.shape() != self.x_ref.shape()
            || self.epsilon.data().iter().any(|&e| !(e > 0.0 && e <= 0.5))
        {
            return Err(PolicyError::BadSpec { what: "epsilon must lie in (0, 0.5], length D" });
        }
        let j = self.action_lo.len();
        if self.action_lo.shape().len() != 1 || j == 0 || self.action_hi.shape() != self.action_lo.shape() {
            return Err(PolicyError::BadSpec { what: "action box must be two equal-length vectors" });
        }
        if !self.action_lo.all_finite() || !self.action_hi.all_finite() {
            return Err(PolicyError::UnboundedActions);
        }
        for jj in 0..j {
            if self.action_lo.get(jj) > self.action_hi.get(jj) {
                return Err(PolicyError::BadSpec { what: "action box has lower > upper" });
            }
        }
        Ok(())
    }
}

/// Objective weights and solver knobs for one policy solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    /// Weight on the information term. Zero turns the solve into pure
    /// safety-margin maximization (passive learning).
    pub lambda1: f64,
    /// Penalty per unit of chance-constraint slack.
    pub slack_penalty: f64,
    /// Sample count for the Q baseline recorded in diagnostics.
    pub baseline_samples: usize,
    pub baseline_seed: u64,
    /// Per-action-dim quadratic surcharge coefficients, approximated by a
    /// four-segment chord overestimate. Empty means zero.
    pub gamma_quadratic: Tensor,
    /// Return the whole planned sequence instead of only the first step.
    pub commit_horizon: bool,
    pub node_limit: u64,
}

impl PolicyConfig {
    pub fn new(lambda1: f64, slack_penalty: f64) -> Self {
        PolicyConfig {
            lambda1,
            slack_penalty,
            baseline_samples: 64,
            baseline_seed: 0,
            gamma_quadratic: Tensor::vector(vec![]),
            commit_horizon: false,
            node_limit: 100_000,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !self.lambda1.is_finite() || self.lambda1 < 0.0 {
            return Err(PolicyError::BadSpec { what: "lambda1 must be finite and nonnegative" });
        }
        if !self.slack_penalty.is_finite() || self.slack_penalty < 0.0 {
            return Err(PolicyError::BadSpec { what: "slack penalty must be finite and nonnegative" });
        }
        if self.baseline_samples == 0 {
            return Err(PolicyError::BadSpec { what: "baseline needs at least one sample" });
        }
        if self.gamma_quadratic.data().iter().any(|&g| !g.is_finite() || g < 0.0) {
            return Err(PolicyError::BadSpec { what: "gamma_quadratic must be finite and nonnegative" });
        }
        Ok(())
    }
}

/// x_{t+T} as an affine function of the action sequence:
/// `x_{t+T} = m_x x_t + sum_k m_u[k] u_k + m_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub m_x: Tensor,
    pub m_u: Vec<Tensor>,
    pub m_0: Tensor,
}

impl AffineMap {
    pub fn eval(&self, x_t: &Tensor, actions: &[Tensor]) -> Result<Tensor, PolicyError> {
        if actions.len() != self.m_u.len() {
            return Err(PolicyError::BadSpec { what: "action count differs from map horizon" });
        }
        let mut x = self.m_x.matvec(x_t)?;
        for (m, u) in self.m_u.iter().zip(actions) {
            x.axpy(1.0, &m.matvec(u)?);
        }
        x.axpy(1.0, &self.m_0);
        Ok(x)
    }
}

/// Unrolls `x_{k+1} = A x_k + B u_k + c` for `horizon` steps. `horizon`
/// zero yields the identity map of `x_t`.
pub fn propagate_mean(
    lin: &Linearization,
    x_t: &Tensor,
    horizon: usize,
) -> Result<AffineMap, PolicyError> {
    let d = lin.c_bar.len();
    if lin.a_bar.shape() != [d, d] {
        return Err(PolicyError::BadSpec { what: "linearization A must be [D, D]" });
    }
    if lin.b_bar.shape().len() != 2 || lin.b_bar.rows() != d {
        return Err(PolicyError::BadSpec { what: "linearization B must be [D, J]" });
    }
    if x_t.shape() != [d] {
        return Err(PolicyError::BadSpec { what: "x_t must be a length-D vector" });
    }
    let mut m_x = Tensor::eye(d);
    let mut m_u: Vec<Tensor> = Vec::with_capacity(horizon);
    let mut m_0 = Tensor::zeros(vec![d]);
    for _ in 0..horizon {
        m_x = lin.a_bar.matmul(&m_x)?;
        for m in m_u.iter_mut() {
            *m = lin.a_bar.matmul(m)?;
        }
        m_u.push(lin.b_bar.clone());
        m_0 = lin.a_bar.matvec(&m_0)?;
        m_0.axpy(1.0, &lin.c_bar);
    }
    Ok(AffineMap { m_x, m_u, m_0 })
}

/// Variables created by [`build_chance_constraints`], indexed for reuse by
/// the objective assembly.
#[derive(Debug, Clone)]
pub struct ChanceParts {
    /// `u_vars[k][j]`: action step k, dimension j, bounded by the box.
    pub u_vars: Vec<Vec<usize>>,
    /// One nonnegative slack per state dimension.
    pub slacks: Vec<usize>,
    /// `abs_u[k][j] = |u_{k,j}|`; empty when the horizon is zero.
    pub abs_u: Vec<Vec<usize>>,
    /// Left side of each dimension's constraint, slack excluded.
    pub lhs: Vec<LinExpr>,
}

/// Interval of a linear expression over the declared variable boxes.
fn expr_box(model: &MilpModel, expr: &LinExpr) -> (f64, f64) {
    let mut lo = expr.constant();
    let mut hi = expr.constant();
    for &(v, c) in expr.terms() {
        let var = model.var(v);
        let (a, b) = (c * var.lower, c * var.upper);
        lo += a.min(b);
        hi += a.max(b);
    }
    (lo, hi)
}

/// Adds the per-dimension sphere-return chance constraints
///
/// `|Delta_d| + Phi^{-1}(1-eps_d) (sum_d' sigma_{d,d'} |x_{t,d'}|
///    + sum_{k,j} sigma_{d,j} |u_{k,j}|) + Gamma - s_d <= r_d`
///
/// where `Delta_d` is the propagated mean deviation from `x_ref`. The
/// Gaussian L2 norm of the uncertainty is upper-bounded by its L1 sum,
/// which keeps the constraint linear and errs on the safe side. Slacks are
/// fresh variables with just-large-enough finite upper bounds.
///
/// `plan_steps` action steps get box variables; only the first
/// `spec.horizon` of them enter the constraints. The surplus steps exist so
/// a Q head over a fixed-length plan can still score them while the
/// receding constraint targets the batch end.
pub fn build_chance_constraints(
    model: &mut MilpModel,
    lin: &Linearization,
    x_t: &Tensor,
    spec: &SafetySpec,
    cfg: &PolicyConfig,
    plan_steps: usize,
) -> Result<ChanceParts, PolicyError> {
    spec.validate()?;
    cfg.validate()?;
    let d = spec.state_dim();
    let j = spec.action_dim();
    if lin.c_bar.len() != d || x_t.len() != d {
        return Err(PolicyError::BadSpec { what: "state dims disagree with linearization" });
    }
    if lin.b_bar.cols() != j {
        return Err(PolicyError::BadSpec { what: "action dims disagree with linearization" });
    }
    if lin.sigma_state.shape() != [d, d] || lin.sigma_action.shape() != [d, j] {
        return Err(PolicyError::BadSpec { what: "sigma shapes disagree with linearization" });
    }
    if lin.sigma_state.data().iter().chain(lin.sigma_action.data()).any(|&s| s < 0.0) {
        return Err(PolicyError::BadSpec { what: "sigmas must be nonnegative" });
    }
    if !cfg.gamma_quadratic.is_empty() && cfg.gamma_quadratic.len() != j {
        return Err(PolicyError::BadSpec { what: "gamma_quadratic must have one entry per action dim" });
    }

    let t = spec.horizon;
    let t_steps = plan_steps.max(1);
    if t_steps < t {
        return Err(PolicyError::BadSpec { what: "plan steps shorter than constraint horizon" });
    }
    let map = propagate_mean(lin, x_t, t)?;

    let u_vars: Vec<Vec<usize>> = (0..t_steps)
        .map(|_| (0..j).map(|jj| model.add_var(spec.action_lo.get(jj), spec.action_hi.get(jj))).collect())
        .collect();

    // |u| helpers, only for steps the horizon actually propagates.
    let mut abs_u: Vec<Vec<usize>> = Vec::new();
    for k in 0..t {
        let mut row = Vec::with_capacity(j);
        for jj in 0..j {
            let (lo, hi) = (spec.action_lo.get(jj), spec.action_hi.get(jj));
            row.push(encode_abs(model, &LinExpr::single(u_vars[k][jj], 1.0), lo, hi)?);
        }
        abs_u.push(row);
    }

    // Quadratic action surcharge: g_{k,j} >= chord lines of gamma_j u^2.
    // The chords of a convex function dominate it inside each segment, so
    // the max over segments is a valid overestimate everywhere in the box.
    let mut gamma_vars: Vec<usize> = Vec::new();
    if !cfg.gamma_quadratic.is_empty() {
        for k in 0..t {
            for jj in 0..j {
                let g = cfg.gamma_quadratic.get(jj);
                if g == 0.0 {
                    continue;
                }
                let (lo, hi) = (spec.action_lo.get(jj), spec.action_hi.get(jj));
                let peak = g * (lo * lo).max(hi * hi);
                let gv = model.add_var(0.0, peak);
                for seg in 0..4 {
                    let a = lo + (hi - lo) * seg as f64 / 4.0;
                    let b = lo + (hi - lo) * (seg + 1) as f64 / 4.0;
                    // Chord through (a, g a^2) and (b, g b^2):
                    // y = g (a + b) u - g a b.
                    let mut chord = LinExpr::single(gv, 1.0);
                    chord.add_term(u_vars[k][jj], -g * (a + b));
                    model.add_constraint(chord, Sense::Ge, -g * a * b);
                }
                gamma_vars.push(gv);
            }
        }
    }

    let mut slacks = Vec::with_capacity(d);
    let mut lhs_all = Vec::with_capacity(d);
    let base = {
        // Constant part of the deviation: m_x x_t + m_0 - x_ref.
        let mut b = map.m_x.matvec(x_t)?;
        b.axpy(1.0, &map.m_0);
        b.axpy(-1.0, &spec.x_ref);
        b
    };
    for dim in 0..d {
        let mut delta = LinExpr::from_constant(base.get(dim));
        for (k, m) in map.m_u.iter().enumerate() {
            for jj in 0..j {
                delta.add_term(u_vars[k][jj], m.get2(dim, jj));
            }
        }
        let (dlo, dhi) = expr_box(model, &delta);
        let abs_delta = encode_abs(model, &delta, dlo, dhi)?;

        let quant = gaussian_quantile(1.0 - spec.epsilon.get(dim))?;
        let mut lhs = LinExpr::single(abs_delta, 1.0);
        if t > 0 {
            let mut state_term = 0.0;
            for dd in 0..d {
                state_term += lin.sigma_state.get2(dim, dd) * x_t.get(dd).abs();
            }
            lhs.add_constant(quant * state_term);
            for row in &abs_u {
                for jj in 0..j {
                    lhs.add_term(row[jj], quant * lin.sigma_action.get2(dim, jj));
                }
            }
        }
        for &gv in &gamma_vars {
            lhs.add_term(gv, 1.0);
        }

        let (_, worst) = expr_box(model, &lhs);
        let slack_cap = (worst - spec.radius.get(dim)).max(0.0) + 1.0;
        let s = model.add_var(0.0, slack_cap);
        slacks.push(s);

        let mut con = lhs.clone();
        con.add_term(s, -1.0);
        model.add_constraint(con, Sense::Le, spec.radius.get(dim));
        lhs_all.push(lhs);
    }

    Ok(ChanceParts { u_vars, slacks, abs_u, lhs: lhs_all })
}

#[derive(Debug, Clone)]
pub struct PolicyDiagnostics {
    /// MILP objective at the returned point.
    pub objective: f64,
    /// Q head evaluated at the returned action sequence.
    pub q_value: f64,
    /// Sampled baseline Q-bar. Recorded for analysis only; it is a
    /// constant and never enters the argmax.
    pub q_baseline: f64,
    pub slack_total: f64,
    pub nodes: u64,
    pub solve_ms: f64,
    pub status: SolveStatus,
    /// True when the node budget ran out and the incumbent was returned.
    pub iter_limited: bool,
}

/// Solves one decision: maximize `lambda1 Q(U, z) - slack_penalty sum s_d`
/// subject to the chance constraints. With `lambda1 = 0` the Q encoding is
/// skipped and the constraint margins are maximized instead, which makes
/// "minimize slack" well-posed even when every slack can reach zero.
///
/// Returns the first-step action (length J), or the whole flattened
/// sequence when `commit_horizon` is set.
pub fn solve_policy(
    acq: &AcquisitionParams,
    history: &History,
    lin: &Linearization,
    x_t: &Tensor,
    spec: &SafetySpec,
    cfg: &PolicyConfig,
) -> Result<(Tensor, PolicyDiagnostics), PolicyError> {
    spec.validate()?;
    cfg.validate()?;
    let t_steps = acq.plan_steps.max(1);
    if t_steps < spec.horizon {
        return Err(PolicyError::BadSpec { what: "encoder plan steps shorter than horizon" });
    }
    if acq.action_dim != spec.action_dim() || acq.state_dim != spec.state_dim() {
        return Err(PolicyError::BadSpec { what: "encoder dims disagree with spec" });
    }

    let start = Instant::now();
    let z = encode_context(acq, history)?;
    let mut model = MilpModel::new();
    let parts = build_chance_constraints(&mut model, lin, x_t, spec, cfg, t_steps)?;
    let flat: Vec<usize> = parts.u_vars.iter().flatten().copied().collect();

    let box_one = spec.action_box();
    let bounds: Vec<(f64, f64)> = (0..t_steps).flat_map(|_| box_one.iter().copied()).collect();
    let q_bar = q_baseline(&acq.q_head, &z.z, &bounds, cfg.baseline_samples, cfg.baseline_seed)?;

    let mut objective = LinExpr::new();
    if cfg.lambda1 > 0.0 {
        let q_var = encode_q_network(&mut model, &acq.q_head, &z.z, &flat)?;
        objective.add_term(q_var, cfg.lambda1);
    } else {
        for lhs in &parts.lhs {
            objective.add_scaled(lhs, -1.0);
        }
    }
    for &s in &parts.slacks {
        objective.add_term(s, -cfg.slack_penalty);
    }
    model.set_objective(objective);

    let sol = bb_solve_with_limit(&model, cfg.node_limit)?;
    let iter_limited = sol.status == SolveStatus::IterLimit;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::IterLimit if !sol.values.is_empty() => {}
        other => {
            return Err(PolicyError::Internal {
                what: format!("slack-relaxed policy MILP came back {:?}", other),
            });
        }
    }

    let full: Vec<f64> = flat.iter().map(|&v| sol.values[v]).collect();
    let q_value = q_forward(&acq.q_head, &z.z, &Tensor::vector(full.clone()))?;
    let slack_total: f64 = parts.slacks.iter().map(|&s| sol.values[s]).sum();
    let action = if cfg.commit_horizon {
        Tensor::vector(full)
    } else {
        Tensor::vector(full[..acq.action_dim].to_vec())
    };
    let diag = PolicyDiagnostics {
        objective: sol.objective,
        q_value,
        q_baseline: q_bar,
        slack_total,
        nodes: sol.nodes,
        solve_ms: start.elapsed().as_secs_f64() * 1e3,
        status: sol.status,
        iter_limited,
    };
    Ok((action, diag))
}

/// Immediate-safety selection over a 1-D candidate grid. A candidate is
/// safe when its score stays nonnegative with probability 1 - epsilon
/// under the GP posterior: `mean - Phi^{-1}(1-eps) std >= 0`. Returns the
/// index of the best survivor by `lambda1 (Q - Q_bar)` (lowest index on
/// ties); if nothing survives, the candidate with the largest safety
/// margin.
pub fn enumerate_policy_1d(
    acq: &AcquisitionParams,
    history: &History,
    candidates: &Tensor,
    gp_safety: &[(f64, f64)],
    spec: &SafetySpec,
    cfg: &PolicyConfig,
) -> Result<usize, PolicyError> {
    spec.validate()?;
    cfg.validate()?;
    if candidates.is_empty() {
        return Err(PolicyError::EmptyGrid);
    }
    if gp_safety.len() != candidates.len() {
        return Err(PolicyError::BadSpec { what: "gp_safety length disagrees with grid" });
    }
    if gp_safety.iter().any(|&(m, s)| !m.is_finite() || !s.is_finite() || s < 0.0) {
        return Err(PolicyError::BadSpec { what: "gp_safety needs finite mean and nonnegative std" });
    }
    if acq.u_dim() != 1 {
        return Err(PolicyError::BadSpec { what: "grid enumeration needs a scalar action head" });
    }

    let quant = gaussian_quantile(1.0 - spec.epsilon.get(0))?;
    let z = encode_context(acq, history)?;
    let lo = candidates.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = candidates.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let q_bar = q_baseline(&acq.q_head, &z.z, &[(lo, hi)], cfg.baseline_samples, cfg.baseline_seed)?;

    let mut best_safe: Option<(usize, f64)> = None;
    let mut best_margin = (0usize, f64::NEG_INFINITY);
    for i in 0..candidates.len() {
        let (mean, std) = gp_safety[i];
        let margin = mean - quant * std;
        if margin > best_margin.1 {
            best_margin = (i, margin);
        }
        if margin >= 0.0 {
            let q = q_forward(&acq.q_head, &z.z, &Tensor::vector(vec![candidates.get(i)]))?;
            let score = cfg.lambda1 * (q - q_bar);
            if best_safe.map_or(true, |(_, s)| score > s) {
                best_safe = Some((i, score));
            }
        }
    }
    Ok(best_safe.map_or(best_margin.0, |(i, _)| i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::nn::{Activation, Layer, MlpParams};

    /// CDF oracle independent of the module's series: Simpson integration
    /// of the density from 0 to |x|.
    fn simpson_cdf(x: f64) -> f64 {
        let (a, b) = (0.0, x.abs());
        let n = 20_000;
        let h = (b - a) / n as f64;
        let pdf = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = pdf(a) + pdf(b);
        for i in 1..n {
            let t = a + i as f64 * h;
            acc += pdf(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let half = acc * h / 3.0;
        if x >= 0.0 {
            0.5 + half
        } else {
            0.5 - half
        }
    }

    fn random_linearization(d: usize, j: usize, scale: f64, rng: &mut ChaCha8Rng) -> Linearization {
        Linearization {
            a_bar: Tensor::uniform(vec![d, d], -scale, scale, rng),
            b_bar: Tensor::uniform(vec![d, j], -scale, scale, rng),
            c_bar: Tensor::uniform(vec![d], -scale, scale, rng),
            sigma_state: Tensor::zeros(vec![d, d]),
            sigma_action: Tensor::zeros(vec![d, j]),
        }
    }

    fn spec_1d(horizon: usize, x_ref: f64, radius: f64, eps: f64, lo: f64, hi: f64) -> SafetySpec {
        SafetySpec {
            x_ref: Tensor::vector(vec![x_ref]),
            radius: Tensor::vector(vec![radius]),
            epsilon: Tensor::vector(vec![eps]),
            horizon,
            action_lo: Tensor::vector(vec![lo]),
            action_hi: Tensor::vector(vec![hi]),
        }
    }

    /// Q head that is a fixed linear function of the flattened actions,
    /// ignoring z: one Identity layer.
    fn linear_q_params(
        state_dim: usize,
        action_dim: usize,
        plan_steps: usize,
        coeffs: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> AcquisitionParams {
        let mut p = AcquisitionParams::init(state_dim, action_dim, plan_steps, 4, 3, (4, 4), rng);
        let u_dim = action_dim * plan_steps;
        assert_eq!(coeffs.len(), u_dim);
        let z_dim = p.z_dim();
        let mut w = Tensor::zeros(vec![1, u_dim + z_dim]);
        for (i, &c) in coeffs.iter().enumerate() {
            w.set2(0, i, c);
        }
        p.q_head = MlpParams::new(vec![Layer {
            weight: w,
            bias: Tensor::vector(vec![0.0]),
            activation: Activation::Identity,
        }])
        .unwrap();
        p
    }

    #[test]
    fn quantile_median_is_zero() {
        assert!(gaussian_quantile(0.5).unwrap().abs() < 1e-12);
    }

    #[test]
    fn quantile_matches_bisection_on_simpson_oracle() {
        // Root of simpson_cdf(x) = 0.975 by bisection.
        let (mut lo, mut hi) = (0.0_f64, 8.0_f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if simpson_cdf(mid) < 0.975 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((oracle - 1.959964).abs() < 1e-6, "oracle sanity: {}", oracle);
        assert!((gaussian_quantile(0.975).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn quantile_round_trips_through_cdf() {
        for &p in &[0.6, 0.9, 0.99] {
            let x = gaussian_quantile(p).unwrap();
            assert!((normal_cdf(x) - p).abs() <= 1e-9, "p={}", p);
        }
    }

    #[test]
    fn quantile_rejects_out_of_domain() {
        for p in [0.0, 1.0, -0.2, 1.7, f64::NAN] {
            assert!(matches!(gaussian_quantile(p), Err(PolicyError::QuantileDomain { .. })));
        }
    }

    #[test]
    fn cdf_matches_simpson_and_is_symmetric() {
        for &x in &[-4.0, -2.0, -0.7, 0.0, 0.3, 1.0, 2.5, 4.0] {
            assert!((normal_cdf(x) - simpson_cdf(x)).abs() < 1e-12, "x={}", x);
            assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn propagate_zero_horizon_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = random_linearization(3, 2, 1.0, &mut rng);
        let x = Tensor::uniform(vec![3], -1.0, 1.0, &mut rng);
        let map = propagate_mean(&lin, &x, 0).unwrap();
        assert_eq!(map.m_x, Tensor::eye(3));
        assert!(map.m_u.is_empty());
        assert_eq!(map.m_0, Tensor::zeros(vec![3]));
        assert_eq!(map.eval(&x, &[]).unwrap(), x);
    }

    #[test]
    fn propagate_one_step_with_zero_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lin = random_linearization(2, 2, 1.0, &mut rng);
        lin.a_bar = Tensor::zeros(vec![2, 2]);
        let x = Tensor::vector(vec![5.0, -3.0]);
        let map = propagate_mean(&lin, &x, 1).unwrap();
        assert_eq!(map.m_x, Tensor::zeros(vec![2, 2]));
        assert_eq!(map.m_u, vec![lin.b_bar.clone()]);
        assert_eq!(map.m_0, lin.c_bar);
    }

    #[test]
    fn propagate_matches_rollout_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lin = random_linearization(3, 2, 0.8, &mut rng);
        let x0 = Tensor::uniform(vec![3], -1.0, 1.0, &mut rng);
        let us: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(vec![2], -1.0, 1.0, &mut rng)).collect();
        let map = propagate_mean(&lin, &x0, 3).unwrap();
        let fast = map.eval(&x0, &us).unwrap();
        let mut slow = x0;
        for u in &us {
            let mut next = lin.a_bar.matvec(&slow).unwrap();
            next.axpy(1.0, &lin.b_bar.matvec(u).unwrap());
            next.axpy(1.0, &lin.c_bar);
            slow = next;
        }
        for i in 0..3 {
            assert!((fast.get(i) - slow.get(i)).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_sigma_pinned_slacks_reduce_to_deterministic_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lin = random_linearization(2, 2, 0.6, &mut rng);
        let x = Tensor::vector(vec![0.4, -0.2]);
        let spec = SafetySpec {
            x_ref: Tensor::vector(vec![0.1, 0.0]),
            radius: Tensor::vector(vec![0.8, 0.8]),
            epsilon: Tensor::vector(vec![0.1, 0.1]),
            horizon: 2,
            action_lo: Tensor::vector(vec![-1.0, -1.0]),
            action_hi: Tensor::vector(vec![1.0, 1.0]),
        };
        let cfg = PolicyConfig::new(0.0, 1.0);
        let mut model = MilpModel::new();
        let parts = build_chance_constraints(&mut model, &lin, &x, &spec, &cfg, spec.horizon).unwrap();
        for &s in &parts.slacks {
            model.set_bounds(s, 0.0, 0.0);
        }
        let mut obj = LinExpr::new();
        for row in &parts.u_vars {
            for &u in row {
                obj.add_term(u, 1.0);
            }
        }
        model.set_objective(obj);
        let sol = crate::milp::bb_solve(&model).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let us: Vec<Tensor> = parts
            .u_vars
            .iter()
            .map(|row| Tensor::vector(row.iter().map(|&v| sol.values[v]).collect()))
            .collect();
        let map = propagate_mean(&lin, &x, 2).unwrap();
        let reached = map.eval(&x, &us).unwrap();
        for d in 0..2 {
            assert!(
                (reached.get(d) - spec.x_ref.get(d)).abs() <= spec.radius.get(d) + 1e-7,
                "dim {} left the sphere",
                d
            );
        }
    }

    #[test]
    fn epsilon_half_erases_the_uncertainty_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut noisy = random_linearization(2, 1, 0.5, &mut rng);
        noisy.sigma_state = Tensor::from_vec(vec![2, 2], vec![3.0, 1.0, 0.5, 2.0]).unwrap();
        noisy.sigma_action = Tensor::from_vec(vec![2, 1], vec![4.0, 1.5]).unwrap();
        let mut quiet = noisy.clone();
        quiet.sigma_state = Tensor::zeros(vec![2, 2]);
        quiet.sigma_action = Tensor::zeros(vec![2, 1]);

        let x = Tensor::vector(vec![0.3, -0.6]);
        let spec = SafetySpec {
            x_ref: Tensor::vector(vec![0.0, 0.0]),
            radius: Tensor::vector(vec![1.0, 1.0]),
            epsilon: Tensor::vector(vec![0.5, 0.5]),
            horizon: 1,
            action_lo: Tensor::vector(vec![-1.0]),
            action_hi: Tensor::vector(vec![1.0]),
        };
        let cfg = PolicyConfig::new(1.0, 1.0);
        let mut a = MilpModel::new();
        build_chance_constraints(&mut a, &noisy, &x, &spec, &cfg, 1).unwrap();
        let mut b = MilpModel::new();
        build_chance_constraints(&mut b, &quiet, &x, &spec, &cfg, 1).unwrap();
        assert_eq!(a.dump(), b.dump());
    }

    #[test]
    fn unbounded_action_box_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lin = random_linearization(1, 1, 0.5, &mut rng);
        let mut spec = spec_1d(1, 0.0, 1.0, 0.1, -1.0, 1.0);
        spec.action_hi = Tensor::vector(vec![f64::INFINITY]);
        let cfg = PolicyConfig::new(1.0, 1.0);
        let mut model = MilpModel::new();
        let err = build_chance_constraints(&mut model, &lin, &Tensor::vector(vec![0.0]), &spec, &cfg, 1)
            .unwrap_err();
        assert_eq!(err, PolicyError::UnboundedActions);
    }

    #[test]
    fn monte_carlo_violation_respects_epsilon() {
        // A tight instance: the objective drags the action against the
        // chance boundary, then true dynamics are resampled around the
        // point estimate. The L1 bound over several terms keeps the
        // empirical violation under eps + 0.03 per dimension.
        let lin = Linearization {
            a_bar: Tensor::from_vec(vec![2, 2], vec![0.9, 0.1, -0.2, 0.8]).unwrap(),
            b_bar: Tensor::from_vec(vec![2, 2], vec![1.0, 0.3, 0.2, 0.9]).unwrap(),
            c_bar: Tensor::vector(vec![0.05, -0.02]),
            sigma_state: Tensor::from_vec(vec![2, 2], vec![0.06, 0.05, 0.04, 0.07]).unwrap(),
            sigma_action: Tensor::from_vec(vec![2, 2], vec![0.08, 0.05, 0.06, 0.09]).unwrap(),
        };
        let x = Tensor::vector(vec![0.5, -0.4]);
        let spec = SafetySpec {
            x_ref: Tensor::vector(vec![0.0, 0.0]),
            radius: Tensor::vector(vec![0.6, 0.6]),
            epsilon: Tensor::vector(vec![0.1, 0.1]),
            horizon: 1,
            action_lo: Tensor::vector(vec![-2.0, -2.0]),
            action_hi: Tensor::vector(vec![2.0, 2.0]),
        };
        let cfg = PolicyConfig::new(0.0, 1e6);
        let mut model = MilpModel::new();
        let parts = build_chance_constraints(&mut model, &lin, &x, &spec, &cfg, spec.horizon).unwrap();
        let mut obj = LinExpr::new();
        for &u in parts.u_vars.iter().flatten() {
            obj.add_term(u, 1.0);
        }
        for &s in &parts.slacks {
            obj.add_term(s, -1e6);
        }
        model.set_objective(obj);
        let sol = crate::milp::bb_solve(&model).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let slack: f64 = parts.slacks.iter().map(|&s| sol.values[s]).sum();
        assert!(slack < 1e-9, "instance must be feasible without slack");
        let u = Tensor::vector(parts.u_vars[0].iter().map(|&v| sol.values[v]).collect());

        // Conservatism: the L2 uncertainty never exceeds the L1 bound used
        // in the constraint.
        for d in 0..2 {
            let mut l1 = 0.0;
            let mut l2 = 0.0;
            for dd in 0..2 {
                let a = lin.sigma_state.get2(d, dd) * x.get(dd).abs();
                l1 += a;
                l2 += a * a;
            }
            for j in 0..2 {
                let a = lin.sigma_action.get2(d, j) * u.get(j).abs();
                l1 += a;
                l2 += a * a;
            }
            assert!(l2.sqrt() <= l1 + 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 10_000;
        let mut violations = [0usize; 2];
        for _ in 0..draws {
            let mut reached = lin.c_bar.clone();
            for d in 0..2 {
                let mut v = reached.get(d);
                for dd in 0..2 {
                    let gauss: f64 = sample_standard_normal(&mut rng);
                    let a = lin.a_bar.get2(d, dd) + gauss * lin.sigma_state.get2(d, dd);
                    v += a * x.get(dd);
                }
                for j in 0..2 {
                    let gauss: f64 = sample_standard_normal(&mut rng);
                    let b = lin.b_bar.get2(d, j) + gauss * lin.sigma_action.get2(d, j);
                    v += b * u.get(j);
                }
                reached.set(d, v);
            }
            for d in 0..2 {
                if (reached.get(d) - spec.x_ref.get(d)).abs() > spec.radius.get(d) {
                    violations[d] += 1;
                }
            }
        }
        for d in 0..2 {
            let freq = violations[d] as f64 / draws as f64;
            assert!(freq <= spec.epsilon.get(d) + 0.03, "dim {}: freq {}", d, freq);
        }
    }

    fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller; one draw per call keeps the test simple.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn lambda_zero_returns_the_centering_action() {
        // x' = x + u with x = 0.5 and the sphere centered at 0: the
        // maximally safe action is exactly -0.5.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let acq = AcquisitionParams::init(1, 1, 1, 4, 3, (4, 4), &mut rng);
        let history = History::new(1, 1);
        let lin = Linearization {
            a_bar: Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap(),
            b_bar: Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap(),
            c_bar: Tensor::vector(vec![0.0]),
            sigma_state: Tensor::zeros(vec![1, 1]),
            sigma_action: Tensor::zeros(vec![1, 1]),
        };
        let spec = spec_1d(1, 0.0, 2.0, 0.1, -1.0, 1.0);
        let cfg = PolicyConfig::new(0.0, 100.0);
        let (u, diag) = solve_policy(&acq, &history, &lin, &Tensor::vector(vec![0.5]), &spec, &cfg).unwrap();
        assert_eq!(u.len(), 1);
        assert!((u.get(0) + 0.5).abs() < 1e-6, "got {}", u.get(0));
        assert_eq!(diag.status, SolveStatus::Optimal);
        assert!(diag.slack_total < 1e-9);
    }

    #[test]
    fn linear_q_drives_to_the_upper_corner() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let acq = linear_q_params(1, 1, 2, &[0.7, 0.4], &mut rng);
        let history = History::new(1, 1);
        let mut lin = random_linearization(1, 1, 0.3, &mut rng);
        lin.c_bar = Tensor::vector(vec![0.0]);
        let spec = spec_1d(2, 0.0, 50.0, 0.1, -1.0, 1.0);
        let cfg = PolicyConfig { commit_horizon: true, ..PolicyConfig::new(1.0, 10.0) };
        let (u, diag) = solve_policy(&acq, &history, &lin, &Tensor::vector(vec![0.0]), &spec, &cfg).unwrap();
        assert_eq!(u.len(), 2);
        assert!((u.get(0) - 1.0).abs() < 1e-6);
        assert!((u.get(1) - 1.0).abs() < 1e-6);
        assert!((diag.q_value - 1.1).abs() < 1e-6);
        assert!(diag.slack_total < 1e-9);
    }

    #[test]
    fn milp_matches_dense_grid_search_in_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let acq = AcquisitionParams::init(1, 1, 1, 4, 3, (6, 6), &mut rng);
        let mut history = History::new(1, 1);
        for i in 0..4 {
            history
                .push(crate::ensemble::TransitionSample::new(
                    Tensor::vector(vec![0.1 * i as f64]),
                    Tensor::vector(vec![-0.05 * i as f64]),
                    Tensor::vector(vec![0.1 * (i + 1) as f64]),
                ))
                .unwrap();
        }
        let lin = Linearization {
            a_bar: Tensor::from_vec(vec![1, 1], vec![0.9]).unwrap(),
            b_bar: Tensor::from_vec(vec![1, 1], vec![0.8]).unwrap(),
            c_bar: Tensor::vector(vec![0.05]),
            sigma_state: Tensor::from_vec(vec![1, 1], vec![0.1]).unwrap(),
            sigma_action: Tensor::from_vec(vec![1, 1], vec![0.2]).unwrap(),
        };
        let x = Tensor::vector(vec![0.4]);
        let spec = spec_1d(1, 0.0, 0.5, 0.2, -1.0, 1.0);
        let cfg = PolicyConfig::new(1.0, 10.0);
        let (_, diag) = solve_policy(&acq, &history, &lin, &x, &spec, &cfg).unwrap();

        let z = encode_context(&acq, &history).unwrap().z;
        let quant = gaussian_quantile(1.0 - 0.2).unwrap();
        let mut best = f64::NEG_INFINITY;
        let mut u = -1.0;
        while u <= 1.0 + 1e-12 {
            let q = q_forward(&acq.q_head, &z, &Tensor::vector(vec![u])).unwrap();
            let mean = 0.9 * 0.4 + 0.8 * u + 0.05;
            let lhs = (mean - 0.0).abs() + quant * (0.1 * 0.4 + 0.2 * u.abs());
            let slack = (lhs - 0.5).max(0.0);
            best = best.max(1.0 * q - 10.0 * slack);
            u += 1e-3;
        }
        assert!(
            (diag.objective - best).abs() <= 1e-3,
            "milp {} vs grid {}",
            diag.objective,
            best
        );
    }

    #[test]
    fn epsilon_tightening_never_raises_the_q_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let acq = linear_q_params(1, 1, 1, &[1.0], &mut rng);
        let history = History::new(1, 1);
        let lin = Linearization {
            a_bar: Tensor::from_vec(vec![1, 1], vec![0.9]).unwrap(),
            b_bar: Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap(),
            c_bar: Tensor::vector(vec![0.0]),
            sigma_state: Tensor::from_vec(vec![1, 1], vec![0.05]).unwrap(),
            sigma_action: Tensor::from_vec(vec![1, 1], vec![0.3]).unwrap(),
        };
        let x = Tensor::vector(vec![0.2]);
        let mut prev = f64::INFINITY;
        for &eps in &[0.4, 0.2, 0.1, 0.05] {
            let spec = spec_1d(1, 0.0, 0.7, eps, -2.0, 2.0);
            let cfg = PolicyConfig::new(1.0, 1e8);
            let (_, diag) = solve_policy(&acq, &history, &lin, &x, &spec, &cfg).unwrap();
            assert!(diag.slack_total < 1e-9);
            assert!(diag.q_value <= prev + 1e-9, "eps {} raised Q to {}", eps, diag.q_value);
            prev = diag.q_value;
        }
    }

    #[test]
    fn deterministic_identity_dynamics_recover_reachability() {
        // sigma = 0, T = 1, A = B = I: feasibility is exactly
        // |x + u - x_ref| <= r, so a Q pulling both coordinates up stops
        // at the per-dimension caps.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let acq = linear_q_params(2, 2, 1, &[1.0, 1.0], &mut rng);
        let history = History::new(2, 2);
        let lin = Linearization {
            a_bar: Tensor::eye(2),
            b_bar: Tensor::eye(2),
            c_bar: Tensor::zeros(vec![2]),
            sigma_state: Tensor::zeros(vec![2, 2]),
            sigma_action: Tensor::zeros(vec![2, 2]),
        };
        let spec = SafetySpec {
            x_ref: Tensor::vector(vec![1.0, 0.0]),
            radius: Tensor::vector(vec![0.5, 0.5]),
            epsilon: Tensor::vector(vec![0.1, 0.1]),
            horizon: 1,
            action_lo: Tensor::vector(vec![-2.0, -2.0]),
            action_hi: Tensor::vector(vec![2.0, 2.0]),
        };
        let cfg = PolicyConfig::new(1.0, 1e8);
        let (u, diag) = solve_policy(&acq, &history, &lin, &Tensor::zeros(vec![2]), &spec, &cfg).unwrap();
        assert!((u.get(0) - 1.5).abs() < 1e-6);
        assert!((u.get(1) - 0.5).abs() < 1e-6);
        assert!(diag.slack_total < 1e-9);
    }

    #[test]
    fn argmax_ignores_constant_objective_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..10 {
            let acq = AcquisitionParams::init(2, 1, 1, 4, 3, (5, 5), &mut rng);
            let mut shifted = acq.clone();
            let last = shifted.q_head.layers.len() - 1;
            let b = shifted.q_head.layers[last].bias.get(0);
            shifted.q_head.layers[last].bias.set(0, b + 17.3);

            let history = History::new(2, 1);
            let lin = Linearization {
                a_bar: Tensor::uniform(vec![2, 2], -0.5, 0.5, &mut rng),
                b_bar: Tensor::uniform(vec![2, 1], -1.0, 1.0, &mut rng),
                c_bar: Tensor::uniform(vec![2], -0.1, 0.1, &mut rng),
                sigma_state: Tensor::zeros(vec![2, 2]),
                sigma_action: Tensor::zeros(vec![2, 1]),
            };
            let x = Tensor::uniform(vec![2], -0.5, 0.5, &mut rng);
            let spec = SafetySpec {
                x_ref: Tensor::zeros(vec![2]),
                radius: Tensor::vector(vec![1.5, 1.5]),
                epsilon: Tensor::vector(vec![0.2, 0.2]),
                horizon: 1,
                action_lo: Tensor::vector(vec![-1.0]),
                action_hi: Tensor::vector(vec![1.0]),
            };
            let cfg = PolicyConfig::new(1.0, 50.0);
            let (u_a, _) = solve_policy(&acq, &history, &lin, &x, &spec, &cfg).unwrap();
            let (u_b, _) = solve_policy(&shifted, &history, &lin, &x, &spec, &cfg).unwrap();
            assert!(
                (u_a.get(0) - u_b.get(0)).abs() < 1e-9,
                "trial {}: {} vs {}",
                trial,
                u_a.get(0),
                u_b.get(0)
            );
        }
    }

    #[test]
    fn gamma_surcharge_discourages_large_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let acq = linear_q_params(1, 1, 1, &[1.0], &mut rng);
        let history = History::new(1, 1);
        let lin = Linearization {
            a_bar: Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap(),
            b_bar: Tensor::from_vec(vec![1, 1], vec![0.1]).unwrap(),
            c_bar: Tensor::vector(vec![0.0]),
            sigma_state: Tensor::zeros(vec![1, 1]),
            sigma_action: Tensor::zeros(vec![1, 1]),
        };
        // Radius trimmed so the quadratic surcharge, not the box, binds.
        let spec = spec_1d(1, 0.0, 0.4, 0.1, -1.0, 1.0);
        let plain = PolicyConfig::new(1.0, 1e8);
        let mut charged = plain.clone();
        charged.gamma_quadratic = Tensor::vector(vec![1.0]);
        let x = Tensor::vector(vec![0.0]);
        let (u_plain, _) = solve_policy(&acq, &history, &lin, &x, &spec, &plain).unwrap();
        let (u_charged, _) = solve_policy(&acq, &history, &lin, &x, &spec, &charged).unwrap();
        assert!(u_charged.get(0) < u_plain.get(0) - 1e-6);
    }

    #[test]
    fn solve_rejects_horizon_longer_than_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let acq = AcquisitionParams::init(1, 1, 2, 4, 3, (4, 4), &mut rng);
        let history = History::new(1, 1);
        let lin = random_linearization(1, 1, 0.5, &mut rng);
        let spec = spec_1d(3, 0.0, 1.0, 0.1, -1.0, 1.0);
        let cfg = PolicyConfig::new(1.0, 1.0);
        let err = solve_policy(&acq, &history, &lin, &Tensor::vector(vec![0.0]), &spec, &cfg).unwrap_err();
        assert!(matches!(err, PolicyError::BadSpec { .. }));
    }

    #[test]
    fn receding_horizon_frees_trailing_plan_steps() {
        // Plan covers 2 steps, constraint only 1: step 0 is pinned by the
        // sphere, step 1 only by the box, so a linear Q pushes it to 1.
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let acq = linear_q_params(1, 1, 2, &[0.7, 0.4], &mut rng);
        let history = History::new(1, 1);
        let lin = Linearization {
            a_bar: Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap(),
            b_bar: Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap(),
            c_bar: Tensor::vector(vec![0.0]),
            sigma_state: Tensor::zeros(vec![1, 1]),
            sigma_action: Tensor::zeros(vec![1, 1]),
        };
        let spec = spec_1d(1, 0.0, 1.0, 0.1, -1.0, 1.0);
        let cfg = PolicyConfig { commit_horizon: true, ..PolicyConfig::new(1.0, 100.0) };
        let x = Tensor::vector(vec![0.5]);
        let (u, diag) = solve_policy(&acq, &history, &lin, &x, &spec, &cfg).unwrap();
        assert_eq!(u.len(), 2);
        assert!((u.get(0) - 0.5).abs() < 1e-6, "x + u0 must stop at the sphere edge");
        assert!((u.get(1) - 1.0).abs() < 1e-6, "unconstrained step should hit the box");
        assert!(diag.slack_total < 1e-9);
    }

    #[test]
    fn enumerate_prefers_best_q_among_safe() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let acq = AcquisitionParams::init(1, 1, 1, 4, 3, (4, 4), &mut rng);
        let history = History::new(1, 1);
        let spec = spec_1d(0, 0.0, 1.0, 0.2, 0.0, 1.0);
        let cfg = PolicyConfig::new(1.0, 1.0);
        let grid = Tensor::vector(vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        // Exactly one candidate is safe: it must win regardless of Q.
        let gp: Vec<(f64, f64)> = vec![(-1.0, 0.1), (-0.5, 0.4), (0.9, 0.2), (-0.2, 0.3), (-2.0, 0.1)];
        let pick = enumerate_policy_1d(&acq, &history, &grid, &gp, &spec, &cfg).unwrap();
        assert_eq!(pick, 2);
    }

    #[test]
    fn enumerate_falls_back_to_max_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let acq = AcquisitionParams::init(1, 1, 1, 4, 3, (4, 4), &mut rng);
        let history = History::new(1, 1);
        let spec = spec_1d(0, 0.0, 1.0, 0.2, 0.0, 1.0);
        let cfg = PolicyConfig::new(1.0, 1.0);
        let grid = Tensor::vector(vec![0.0, 0.5, 1.0]);
        let quant = gaussian_quantile(0.8).unwrap();
        // All unsafe; margins -0.1q, -0.5-0.2q, -1-0.3q: index 0 wins.
        let gp = vec![(0.0, 0.1), (-0.5, 0.2), (-1.0, 0.3)];
        assert!(gp.iter().all(|&(m, s)| m - quant * s < 0.0));
        let pick = enumerate_policy_1d(&acq, &history, &grid, &gp, &spec, &cfg).unwrap();
        assert_eq!(pick, 0);
    }

    #[test]
    fn enumerate_with_epsilon_half_filters_on_mean_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let acq = linear_q_params(1, 1, 1, &[1.0], &mut rng);
        let history = History::new(1, 1);
        let spec = spec_1d(0, 0.0, 1.0, 0.5, 0.0, 1.0);
        let cfg = PolicyConfig::new(1.0, 1.0);
        let grid = Tensor::vector(vec![0.0, 0.5, 1.0]);
        // Means decide alone at eps = 0.5: candidates 0 and 1 are safe in
        // spite of huge stds; Q = u picks index 1.
        let gp = vec![(0.1, 100.0), (0.0, 100.0), (-0.1, 0.0)];
        let pick = enumerate_policy_1d(&acq, &history, &grid, &gp, &spec, &cfg).unwrap();
        assert_eq!(pick, 1);
    }

    #[test]
    fn enumerate_rejects_empty_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let acq = AcquisitionParams::init(1, 1, 1, 4, 3, (4, 4), &mut rng);
        let history = History::new(1, 1);
        let spec = spec_1d(0, 0.0, 1.0, 0.2, 0.0, 1.0);
        let cfg = PolicyConfig::new(1.0, 1.0);
        let err = enumerate_policy_1d(&acq, &history, &Tensor::vector(vec![]), &[], &spec, &cfg)
            .unwrap_err();
        assert_eq!(err, PolicyError::EmptyGrid);
    }

    #[test]
    fn spec_validation_catches_bad_fields() {
        let good = spec_1d(1, 0.0, 1.0, 0.1, -1.0, 1.0);
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.radius = Tensor::vector(vec![0.0]);
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.epsilon = Tensor::vector(vec![0.6]);
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.action_lo = Tensor::vector(vec![2.0]);
        assert!(bad.validate().is_err());
        let mut bad = good;
        bad.epsilon = Tensor::vector(vec![0.1, 0.1]);
        assert!(bad.validate().is_err());

        let mut cfg = PolicyConfig::new(1.0, 1.0);
        assert!(cfg.validate().is_ok());
        cfg.lambda1 = -0.5;
        assert!(cfg.validate().is_err());
        cfg.lambda1 = 1.0;
        cfg.slack_penalty = f64::NAN;
        assert!(cfg.validate().is_err());
    }
}
