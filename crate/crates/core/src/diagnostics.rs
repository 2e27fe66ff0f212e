//! Local-minimum certification and derivative checks.
//!
//! `μ(x) = max{‖∇F(x)‖^{3/2}, (max(−λ_min(∇²F(x)), 0))³ / ρ^{3/2}}`, so that
//! `μ(x) ≤ ε^{3/2}` holds exactly when `‖∇F‖ ≤ ε` and `λ_min ≥ −√(ρε)`.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cubic::DENSE_LIMIT;
use crate::error::{Error, Result};
use crate::problem::{
    batch_hvp, full_gradient, full_hessian, full_value, FiniteSumProblem, IndexBatch, Matrix, OracleCounter, Vector,
};

/// Default iteration cap for the power-iteration eigensolver.
pub const POWER_MAX_ITERS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalMinCertificate {
    pub grad_norm: f64,
    pub lambda_min: f64,
    pub mu: f64,
    /// Gradient threshold `ε`.
    pub eps_g: f64,
    /// Curvature threshold `√(ρε)`.
    pub eps_h: f64,
}

impl LocalMinCertificate {
    /// Whether `x` is an `(ε_g, ε_H)`-approximate local minimum.
    pub fn is_approx_local_min(&self) -> bool {
        self.grad_norm <= self.eps_g && self.lambda_min >= -self.eps_h
    }
}

/// `μ` from its two ingredients. Only negative curvature contributes.
pub fn mu_value(grad_norm: f64, lambda_min: f64, rho: f64) -> f64 {
    let neg = (-lambda_min).max(0.0);
    grad_norm.powf(1.5).max(neg.powi(3) / rho.powf(1.5))
}

/// Smallest eigenvalue of a symmetric matrix, accurate to `tol·‖H‖₂`.
/// Dense decomposition up to [`DENSE_LIMIT`], power iteration beyond.
pub fn min_eigenvalue(h: &Matrix, tol: f64) -> Result<f64> {
    let d = h.nrows();
    if d != h.ncols() {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: h.ncols(),
        });
    }
    if d <= DENSE_LIMIT {
        dense_min_eigenvalue(h)
    } else {
        min_eigenvalue_iterative(|v| h * v, d, tol, POWER_MAX_ITERS)
    }
}

fn dense_min_eigenvalue(h: &Matrix) -> Result<f64> {
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigensolver("dense eigendecomposition did not converge".into()))?;
    Ok(eig.eigenvalues.min())
}

fn power_iteration<F: Fn(&Vector) -> Vector>(
    apply: F,
    d: usize,
    tol: f64,
    scale: f64,
    max_iters: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    v /= v.norm();
    for _ in 0..max_iters {
        let w = apply(&v);
        let theta = v.dot(&w);
        let residual = (&w - &v * theta).norm();
        if residual <= tol * scale {
            return Ok(theta);
        }
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(0.0);
        }
        v = w / wn;
    }
    Err(Error::Eigensolver(format!(
        "power iteration did not converge in {max_iters} iterations"
    )))
}

/// Smallest eigenvalue of a symmetric operator by power iteration on
/// `cI − H`, where `c` bounds `λ_max` from above.
pub fn min_eigenvalue_iterative<F: Fn(&Vector) -> Vector>(
    apply: F,
    d: usize,
    tol: f64,
    max_iters: usize,
) -> Result<f64> {
    // ‖H‖₂ estimate; ‖Hv‖ converges even when ±λ_max oscillate
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut top = 0.0f64;
    for _ in 0..100 {
        v /= v.norm();
        v = apply(&v);
        let vn = v.norm();
        top = top.max(vn);
        if vn == 0.0 {
            break;
        }
    }
    let norm = top.abs();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let shift = 1.1 * norm;
    let theta = power_iteration(|v| v * shift - apply(v), d, tol, norm, max_iters, 0x5eed + 1)?;
    Ok(shift - theta)
}

fn curvature<P: FiniteSumProblem + ?Sized>(problem: &P, x: &Vector) -> Result<f64> {
    let d = problem.dim();
    if problem.has_explicit_hessian() && d <= DENSE_LIMIT {
        dense_min_eigenvalue(&full_hessian(problem, x)?)
    } else {
        let n = problem.num_components();
        let all: Vec<usize> = (0..n).collect();
        let op = problem.batch_hvp_operator(x, &all);
        min_eigenvalue_iterative(|v| op(v), d, 1e-8, POWER_MAX_ITERS)
    }
}

/// Full certificate at `x` for accuracy `ε` and Hessian Lipschitz constant `ρ`.
pub fn local_min_certificate<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &Vector,
    eps: f64,
    rho: f64,
) -> Result<LocalMinCertificate> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument("ρ must be positive".into()));
    }
    let grad_norm = full_gradient(problem, x)?.norm();
    let lambda_min = curvature(problem, x)?;
    Ok(LocalMinCertificate {
        grad_norm,
        lambda_min,
        mu: mu_value(grad_norm, lambda_min, rho),
        eps_g: eps,
        eps_h: (rho * eps).sqrt(),
    })
}

/// `μ(x)`.
pub fn mu_criterion<P: FiniteSumProblem + ?Sized>(problem: &P, x: &Vector, rho: f64) -> Result<f64> {
    Ok(local_min_certificate(problem, x, 1.0, rho)?.mu)
}

/// `μ(x) ≤ c·ε^{3/2}`, with the certificate.
pub fn certify_local_min<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &Vector,
    eps: f64,
    rho: f64,
    c: f64,
) -> Result<(bool, LocalMinCertificate)> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument("guarantee constant must be positive".into()));
    }
    let cert = local_min_certificate(problem, x, eps, rho)?;
    Ok((cert.mu <= c * eps.powf(1.5), cert))
}

/// Max over coordinates of `|central difference − analytic| / (1 + |central difference|)`
/// for the full objective.
pub fn finite_diff_grad_check<P: FiniteSumProblem + ?Sized>(problem: &P, x: &Vector, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let g = full_gradient(problem, x)?;
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for j in 0..x.len() {
        probe[j] = x[j] + step;
        let up = full_value(problem, &probe);
        probe[j] = x[j] - step;
        let down = full_value(problem, &probe);
        probe[j] = x[j];
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((fd - g[j]).abs() / (1.0 + fd.abs()));
    }
    Ok(worst)
}

/// `‖HVP(v) − ∇²F(x)·v‖ / (1 + ‖v‖)` on the full objective.
pub fn hvp_check<P: FiniteSumProblem + ?Sized>(problem: &P, x: &Vector, v: &Vector) -> Result<f64> {
    let dense = full_hessian(problem, x)? * v;
    let mut scratch = OracleCounter::new();
    let hv = batch_hvp(problem, x, &IndexBatch::full(problem.num_components()), v, &mut scratch)?;
    Ok((hv - dense).norm() / (1.0 + v.norm()))
}
