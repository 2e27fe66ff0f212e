//! Cubic-regularized model `m(h) = bᵀh + ½ hᵀA[h] + (τ/6)‖h‖³` and its
//! solvers.
//!
//! Three solvers are provided:
//!
//! - [`solve_exact`]: dense global minimizer via eigendecomposition and the
//!   scalar secular equation, including the hard case.
//! - [`cubic_subsolver`]: perturbed gradient descent from the Cauchy point that
//!   stops as soon as a sufficient model decrease is certified.
//! - [`cubic_finalsolver`]: plain gradient descent from the Cauchy point until
//!   the model gradient is small.
//!
//! The gradient-based solvers touch `A` only through products `A[v]`.

use std::cell::Cell;

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problem::{asymmetry, Matrix, Vector};

/// Largest dimension accepted by [`solve_exact`].
pub const DENSE_LIMIT: usize = 2000;

/// Default hard cap on finalsolver iterations.
pub const FINALSOLVER_MAX_ITERS: usize = 1_000_000;

/// A symmetric linear map `v ↦ A[v]`.
pub trait HessianOperator {
    fn dim(&self) -> usize;

    fn apply(&self, v: &Vector) -> Vector;

    /// The explicit matrix, when one exists.
    fn as_matrix(&self) -> Option<&Matrix> {
        None
    }
}

impl HessianOperator for Matrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &Vector) -> Vector {
        self * v
    }

    fn as_matrix(&self) -> Option<&Matrix> {
        Some(self)
    }
}

/// Wraps a closure as a [`HessianOperator`] and counts its applications.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
    applications: Cell<u64>,
}

impl<F: Fn(&Vector) -> Vector> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self {
            dim,
            f,
            applications: Cell::new(0),
        }
    }

    /// Number of times [`HessianOperator::apply`] has run.
    pub fn applications(&self) -> u64 {
        self.applications.get()
    }
}

impl<F: Fn(&Vector) -> Vector> HessianOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &Vector) -> Vector {
        self.applications.set(self.applications.get() + 1);
        (self.f)(v)
    }
}

/// One cubic subproblem instance.
pub struct CubicModel<A> {
    pub b: Vector,
    pub a: A,
    /// Cubic penalty `τ > 0`.
    pub penalty: f64,
    /// Upper bound `β ≥ ‖A‖₂`.
    pub hess_norm_bound: f64,
}

impl<A: HessianOperator> CubicModel<A> {
    pub fn new(b: Vector, a: A, penalty: f64, hess_norm_bound: f64) -> Result<Self> {
        if !(penalty > 0.0 && penalty.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cubic penalty must be positive, got {penalty}"
            )));
        }
        if !(hess_norm_bound >= 0.0) {
            return Err(Error::InvalidArgument("Hessian norm bound must be ≥ 0".into()));
        }
        if a.dim() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: b.len(),
                got: a.dim(),
            });
        }
        if let Some(m) = a.as_matrix() {
            if m.nrows() != m.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: m.nrows(),
                    got: m.ncols(),
                });
            }
            let asym = asymmetry(m);
            if asym > 1e-10 * (1.0 + m.amax()) {
                return Err(Error::NotSymmetric(asym));
            }
        }
        Ok(Self {
            b,
            a,
            penalty,
            hess_norm_bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `m(h)`; one operator application.
    pub fn value(&self, h: &Vector) -> f64 {
        let ah = self.a.apply(h);
        self.value_with(&self.b, h, &ah)
    }

    /// `∇m(h) = b + A[h] + (τ/2)‖h‖h`; one operator application.
    pub fn gradient(&self, h: &Vector) -> Vector {
        let ah = self.a.apply(h);
        self.gradient_with(&self.b, h, &ah)
    }

    fn value_with(&self, b: &Vector, h: &Vector, ah: &Vector) -> f64 {
        let r = h.norm();
        b.dot(h) + 0.5 * h.dot(ah) + self.penalty * r * r * r / 6.0
    }

    fn gradient_with(&self, b: &Vector, h: &Vector, ah: &Vector) -> Vector {
        b + ah + h * (0.5 * self.penalty * h.norm())
    }

    /// Minimizer of the model along `−b`, returned with `A[x]` (derived from
    /// the single product `A[b]`). `b = 0` yields the zero vector.
    fn cauchy_with_product(&self) -> (Vector, Vector) {
        let d = self.dim();
        let bn = self.b.norm();
        if bn == 0.0 {
            return (Vector::zeros(d), Vector::zeros(d));
        }
        let ab = self.a.apply(&self.b);
        let c = -self.b.dot(&ab) / (self.penalty * bn * bn);
        let k = 2.0 * bn / self.penalty;
        let root = (c * c + k).sqrt();
        // c + √(c² + k), rewritten to avoid cancellation when c < 0
        let rc = if c >= 0.0 { c + root } else { k / (root - c) };
        let scale = -rc / bn;
        (&self.b * scale, ab * scale)
    }

    /// The Cauchy point `−R_c b / ‖b‖₂`.
    pub fn cauchy_point(&self) -> Vector {
        self.cauchy_with_product().0
    }
}

/// `m(h)` for a model.
pub fn cubic_function<A: HessianOperator>(model: &CubicModel<A>, h: &Vector) -> f64 {
    model.value(h)
}

/// `∇m(h)` for a model.
pub fn cubic_gradient<A: HessianOperator>(model: &CubicModel<A>, h: &Vector) -> Vector {
    model.gradient(h)
}

/// Cauchy point of a model.
pub fn cauchy_point<A: HessianOperator>(model: &CubicModel<A>) -> Vector {
    model.cauchy_point()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Exact,
    SubsolverEarlyExit,
    SubsolverIterated,
    Finalsolver,
}

#[derive(Debug, Clone)]
pub struct CubicSolution {
    pub h: Vector,
    /// `m(h)` on the unperturbed model.
    pub m_value: f64,
    /// Multiplier `λ* = τ‖h*‖/2`; exact solver only.
    pub lambda: Option<f64>,
    pub status: SolveStatus,
    /// Gradient steps taken (zero for the exact solver).
    pub iterations: usize,
}

/// Global minimizer of a dense cubic model.
///
/// With `A = QΛQᵀ` and `g = Qᵀb`, stationarity `(A + λI)h = −b` with
/// `λ = τ‖h‖/2` reduces to `φ(λ) = ‖(Λ + λI)⁻¹g‖ − 2λ/τ = 0` on
/// `λ ≥ max(0, −λ_min)`. `φ` is convex and decreasing there, so a Newton
/// iteration safeguarded by bisection converges from either side. When `g`
/// has no weight on the bottom eigenspace and the root sits at the boundary
/// (the hard case), a bottom eigenvector is added to reach `‖h‖ = 2λ/τ`.
///
/// `tol` bounds the secular residual: `|φ(λ)| ≤ tol·(1 + ‖b‖)`, unless the
/// root bracket has already collapsed to machine precision.
pub fn solve_exact(model: &CubicModel<Matrix>, tol: f64) -> Result<CubicSolution> {
    let d = model.dim();
    if d > DENSE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "dimension {d} exceeds dense limit {DENSE_LIMIT}"
        )));
    }
    let a = &model.a;
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigensolver("symmetric eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let evals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let evecs: Vec<Vector> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    let g: Vec<f64> = evecs.iter().map(|q| q.dot(&model.b)).collect();

    let tau = model.penalty;
    let bnorm = model.b.norm();
    let lam_min = evals[0];
    let lam_low = (-lam_min).max(0.0);
    let spread = evals.iter().fold(0.0f64, |m, e| m.max(e.abs())).max(1.0);
    let bottom: Vec<bool> = evals.iter().map(|&e| e - lam_min <= 1e-12 * spread).collect();
    let g_bottom = g
        .iter()
        .zip(&bottom)
        .filter(|(_, &b)| b)
        .map(|(gi, _)| gi * gi)
        .sum::<f64>()
        .sqrt();

    let assemble = |lam: f64, skip_bottom: bool| -> Vector {
        let mut h = Vector::zeros(d);
        for i in 0..d {
            if g[i] == 0.0 || (skip_bottom && bottom[i]) {
                continue;
            }
            h -= &evecs[i] * (g[i] / (evals[i] + lam));
        }
        h
    };

    if g_bottom <= 1e-12 * bnorm && lam_min <= 0.0 {
        let h_rest = assemble(lam_low, true);
        let target = 2.0 * lam_low / tau;
        let rest = h_rest.norm();
        if rest <= target {
            let alpha = (target * target - rest * rest).max(0.0).sqrt();
            let h = h_rest + &evecs[0] * alpha;
            let m_value = model.value(&h);
            return Ok(CubicSolution {
                h,
                m_value,
                lambda: Some(lam_low),
                status: SolveStatus::Exact,
                iterations: 0,
            });
        }
    }

    // ‖h(λ)‖ and its derivative in λ
    let eval = |lam: f64| -> (f64, f64) {
        let mut s2 = 0.0;
        let mut s3 = 0.0;
        for i in 0..d {
            if g[i] == 0.0 {
                continue;
            }
            let den = evals[i] + lam;
            if den <= 0.0 {
                return (f64::INFINITY, f64::NEG_INFINITY);
            }
            let q = g[i] / den;
            s2 += q * q;
            s3 += q * q / den;
        }
        let norm = s2.sqrt();
        let dnorm = if norm > 0.0 { -s3 / norm } else { 0.0 };
        (norm, dnorm)
    };

    let target = tol * (1.0 + bnorm);
    let mut lo = lam_low;
    let mut hi = lam_low + (0.5 * tau * bnorm).sqrt();
    // guaranteed φ(hi) ≤ 0 in exact arithmetic; widen against rounding
    while eval(hi).0 - 2.0 * hi / tau > 0.0 {
        hi = lam_low + 2.0 * (hi - lam_low).max(f64::MIN_POSITIVE);
    }
    let mut lam = hi;
    for _ in 0..500 {
        let (norm, dnorm) = eval(lam);
        let phi = norm - 2.0 * lam / tau;
        if phi.abs() <= target {
            break;
        }
        if phi > 0.0 {
            lo = lam;
        } else {
            hi = lam;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.max(f64::MIN_POSITIVE) {
            lam = hi;
            break;
        }
        let dphi = dnorm - 2.0 / tau;
        let newton = lam - phi / dphi;
        lam = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    let h = assemble(lam, false);
    let m_value = model.value(&h);
    Ok(CubicSolution {
        h,
        m_value,
        lambda: Some(lam),
        status: SolveStatus::Exact,
        iterations: 0,
    })
}

/// Tuning inputs of [`cubic_subsolver`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsolverParams {
    /// Gradient step size `η`.
    pub step_size: f64,
    /// Target radius `ζ`.
    pub zeta: f64,
    /// Relative slack `ε' ∈ (0, 1)` in the decrease test.
    pub eps_prime: f64,
    /// Failure probability `δ' ∈ (0, 1)`.
    pub delta_prime: f64,
}

impl SubsolverParams {
    fn validate(&self) -> Result<()> {
        let ok = self.step_size > 0.0
            && self.zeta > 0.0
            && self.eps_prime > 0.0
            && self.eps_prime < 1.0
            && self.delta_prime > 0.0
            && self.delta_prime < 1.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid subsolver parameters {self:?}")));
        }
        Ok(())
    }

    /// The sufficient-decrease level `−(1 − ε')τζ³/12`.
    pub fn decrease_threshold(&self, penalty: f64) -> f64 {
        -(1.0 - self.eps_prime) * penalty * self.zeta.powi(3) / 12.0
    }

    /// Gradient-step budget `⌈T'⌉` with
    /// `T' = 480/(ητζε') · [6 log(1 + √d/δ') + 32 log(12/(ητζε'))]`,
    /// clamped at zero.
    pub fn step_budget(&self, penalty: f64, dim: usize) -> usize {
        let c = self.step_size * penalty * self.zeta * self.eps_prime;
        let t = 480.0 / c * (6.0 * (1.0 + (dim as f64).sqrt() / self.delta_prime).ln() + 32.0 * (12.0 / c).ln());
        if t.is_finite() {
            t.max(0.0).ceil() as usize
        } else {
            usize::MAX
        }
    }
}

/// Perturbed gradient descent on the cubic model.
///
/// Returns the Cauchy point directly when it already meets the decrease
/// level. Otherwise `b` is perturbed by `σq` with `q` uniform on the unit
/// sphere, `σ = τ²ζ³ε'/((β + τζ)·576)`, and at most [`SubsolverParams::step_budget`]
/// gradient steps are taken on the perturbed model, stopping once its value
/// meets the decrease level. The reported `m_value` is always evaluated on the
/// unperturbed model.
pub fn cubic_subsolver<A: HessianOperator, R: Rng + ?Sized>(
    model: &CubicModel<A>,
    params: &SubsolverParams,
    rng: &mut R,
) -> Result<CubicSolution> {
    params.validate()?;
    let tau = model.penalty;
    let threshold = params.decrease_threshold(tau);
    let (x0, ax0) = model.cauchy_with_product();
    let m0 = model.value_with(&model.b, &x0, &ax0);
    if m0 <= threshold {
        return Ok(CubicSolution {
            h: x0,
            m_value: m0,
            lambda: None,
            status: SolveStatus::SubsolverEarlyExit,
            iterations: 0,
        });
    }

    let d = model.dim();
    let budget = params.step_budget(tau, d);
    let sigma =
        tau * tau * params.zeta.powi(3) * params.eps_prime / (model.hess_norm_bound + tau * params.zeta) / 576.0;
    let mut q = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qn = q.norm();
    if qn > 0.0 {
        q /= qn;
    }
    let b_pert = &model.b + q * sigma;

    let mut x = x0;
    let mut ax = ax0;
    let mut steps = 0;
    while steps < budget {
        steps += 1;
        let grad = model.gradient_with(&b_pert, &x, &ax);
        x -= grad * params.step_size;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::SolverDivergence { step: steps });
        }
        ax = model.a.apply(&x);
        if model.value_with(&b_pert, &x, &ax) <= threshold {
            break;
        }
    }
    let m_value = model.value_with(&model.b, &x, &ax);
    Ok(CubicSolution {
        h: x,
        m_value,
        lambda: None,
        status: SolveStatus::SubsolverIterated,
        iterations: steps,
    })
}

/// Upper bound `1/(4(β + τR))` on the finalsolver step size, with
/// `R = β/(2τ) + √((β/(2τ))² + ‖b‖/τ)`.
pub fn finalsolver_step_limit<A: HessianOperator>(model: &CubicModel<A>) -> f64 {
    let tau = model.penalty;
    let beta = model.hess_norm_bound;
    let half = beta / (2.0 * tau);
    let radius = half + (half * half + model.b.norm() / tau).sqrt();
    1.0 / (4.0 * (beta + tau * radius))
}

/// Gradient descent from the Cauchy point until `‖∇m(Δ)‖ ≤ eps_g`.
///
/// The step size must satisfy `η < 1/(4(β + τR))` with
/// `R = β/(2τ) + √((β/(2τ))² + ‖b‖/τ)`, which keeps every iterate inside the
/// ball of radius `‖h*‖`.
pub fn cubic_finalsolver<A: HessianOperator>(
    model: &CubicModel<A>,
    step_size: f64,
    eps_g: f64,
    max_iters: usize,
) -> Result<CubicSolution> {
    let limit = finalsolver_step_limit(model);
    if !(step_size > 0.0 && step_size < limit) {
        return Err(Error::InvalidArgument(format!(
            "finalsolver step size {step_size} must lie in (0, {limit})"
        )));
    }
    if !(eps_g > 0.0) {
        return Err(Error::InvalidArgument("finalsolver tolerance must be positive".into()));
    }
    let (mut x, mut ax) = model.cauchy_with_product();
    let mut grad = model.gradient_with(&model.b, &x, &ax);
    let mut iters = 0;
    while grad.norm() > eps_g {
        if iters >= max_iters {
            return Err(Error::BudgetExceeded(max_iters));
        }
        iters += 1;
        x -= &grad * step_size;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::SolverDivergence { step: iters });
        }
        ax = model.a.apply(&x);
        grad = model.gradient_with(&model.b, &x, &ax);
    }
    let m_value = model.value_with(&model.b, &x, &ax);
    Ok(CubicSolution {
        h: x,
        m_value,
        lambda: None,
        status: SolveStatus::Finalsolver,
        iterations: iters,
    })
}
