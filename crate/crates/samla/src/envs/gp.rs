//! Exact 1-D Gaussian-process regression with an RBF kernel, used both as
//! the ADMETS ground-truth surrogate and by the Bayesian-optimization
//! baseline.

use super::EnvError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.lengthscale > 0.0) || !self.lengthscale.is_finite() {
            return Err(EnvError::BadConfig { what: "lengthscale must be positive" });
        }
        if !(self.signal_var > 0.0) || !self.signal_var.is_finite() {
            return Err(EnvError::BadConfig { what: "signal variance must be positive" });
        }
        if !(self.noise_var >= 0.0) || !self.noise_var.is_finite() {
            return Err(EnvError::BadConfig { what: "noise variance must be nonnegative" });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    inputs: Vec<f64>,
    hyper: GpHyper,
    /// Lower-triangular factor of K + noise I (jittered if needed), row-major.
    chol: Vec<f64>,
    /// (K + noise I)^{-1} targets.
    alpha: Vec<f64>,
}

impl GpModel {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }
}

fn kernel(h: &GpHyper, a: f64, b: f64) -> f64 {
    let d = a - b;
    h.signal_var * (-d * d / (2.0 * h.lengthscale * h.lengthscale)).exp()
}

/// In-place lower Cholesky of a row-major symmetric matrix. Fails on a
/// non-positive pivot.
fn cholesky(m: &mut [f64], n: usize) -> Result<(), ()> {
    for i in 0..n {
        for j in 0..=i {
            let mut acc = m[i * n + j];
            for k in 0..j {
                acc -= m[i * n + k] * m[j * n + k];
            }
            if i == j {
                if !(acc > 0.0) {
                    return Err(());
                }
                m[i * n + i] = acc.sqrt();
            } else {
                m[i * n + j] = acc / m[j * n + j];
            }
        }
        for j in i + 1..n {
            m[i * n + j] = 0.0;
        }
    }
    Ok(())
}

const JITTER: f64 = 1e-8;

pub fn fit_gp(inputs: &Tensor, targets: &Tensor, hyper: &GpHyper) -> Result<GpModel, EnvError> {
    hyper.validate()?;
    let n = inputs.len();
    if inputs.shape().len() != 1 || n == 0 {
        return Err(EnvError::Dim { what: "fit_gp inputs", expected: 1, got: n });
    }
    if targets.shape() != inputs.shape() {
        return Err(EnvError::Dim { what: "fit_gp targets", expected: n, got: targets.len() });
    }
    let xs = inputs.data().to_vec();
    let build = |extra: f64| -> Vec<f64> {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = kernel(hyper, xs[i], xs[j]);
            }
            k[i * n + i] += hyper.noise_var + extra;
        }
        k
    };
    let mut chol = build(0.0);
    if cholesky(&mut chol, n).is_err() {
        chol = build(JITTER);
        if cholesky(&mut chol, n).is_err() {
            return Err(EnvError::NotPositiveDefinite);
        }
    }
    // alpha = (L L^T)^{-1} y via two triangular solves.
    let mut alpha = targets.data().to_vec();
    for i in 0..n {
        for k in 0..i {
            alpha[i] = alpha[i] - chol[i * n + k] * alpha[k];
        }
        alpha[i] /= chol[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            alpha[i] = alpha[i] - chol[k * n + i] * alpha[k];
        }
        alpha[i] /= chol[i * n + i];
    }
    Ok(GpModel { inputs: xs, hyper: hyper.clone(), chol, alpha })
}

/// Posterior mean and std of the latent function at `query`.
pub fn gp_posterior(gp: &GpModel, query: f64) -> (f64, f64) {
    let n = gp.inputs.len();
    let kstar: Vec<f64> = gp.inputs.iter().map(|&x| kernel(&gp.hyper, query, x)).collect();
    let mean: f64 = kstar.iter().zip(&gp.alpha).map(|(k, a)| k * a).sum();
    // v = L^{-1} k*; var = k(q,q) - v.v.
    let mut v = kstar;
    for i in 0..n {
        for k in 0..i {
            v[i] = v[i] - gp.chol[i * n + k] * v[k];
        }
        v[i] /= gp.chol[i * n + i];
    }
    let var = gp.hyper.signal_var - v.iter().map(|x| x * x).sum::<f64>();
    (mean, var.max(0.0).sqrt())
}
