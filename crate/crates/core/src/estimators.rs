//! Recursive semi-stochastic gradient and Hessian estimators, plus the batch
//! size schedules that drive them.
//!
//! At a reset step (`t mod S = 0`) the estimator is a plain subsampled
//! average. Between resets it is corrected recursively,
//! `v_t = ∇f_J(x_t) − ∇f_J(x_{t−1}) + v_{t−1}` with the same multiset `J` for
//! both evaluations, and analogously for the Hessian.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{
    batch_gradient, batch_hessian, sample_multiset, FiniteSumProblem, GradBound, Matrix, OracleCounter, Vector,
};

/// Which family of theoretical batch formulas to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleVariant {
    /// Explicit-Hessian algorithm: constants 1440 / 800, `log(2T/ξ)`.
    Srvrc,
    /// Hessian-free algorithm: constants 2640 / 1200, `log(3T/ξ)`.
    HessianFree,
}

/// Batch sizes from the high-probability analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoreticalSchedule {
    pub variant: ScheduleVariant,
    pub n: usize,
    pub dim: usize,
    pub eps: f64,
    pub xi: f64,
    /// Iteration budget `T`.
    pub budget: usize,
    pub lipschitz_grad: f64,
    pub lipschitz_hess: f64,
    pub grad_bound: GradBound,
    pub grad_epoch: usize,
    pub hess_epoch: usize,
}

/// Tuned schedule: full base sizes at reset steps, `⌊B/S⌋` in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PracticalSchedule {
    pub grad_batch: usize,
    pub hess_batch: usize,
    pub epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchRule {
    Theoretical(TheoreticalSchedule),
    Practical(PracticalSchedule),
}

impl TheoreticalSchedule {
    fn validate(&self) -> Result<()> {
        let ok = self.n >= 1
            && self.dim >= 1
            && self.eps > 0.0
            && self.xi > 0.0
            && self.xi < 1.0
            && self.budget >= 1
            && self.lipschitz_grad > 0.0
            && self.lipschitz_hess > 0.0
            && self.grad_bound.value() >= 0.0
            && self.grad_epoch >= 1
            && self.hess_epoch >= 1;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid theoretical schedule {self:?}")));
        }
        Ok(())
    }

    fn grad_constants(&self) -> (f64, f64) {
        let t = self.budget as f64;
        match self.variant {
            ScheduleVariant::Srvrc => (1440.0, (2.0 * t / self.xi).ln()),
            ScheduleVariant::HessianFree => (2640.0, (3.0 * t / self.xi).ln()),
        }
    }
}

/// `⌈x⌉` clamped to `[1, n]`; non-finite values map to `n`.
fn clamp_batch(x: f64, n: usize) -> usize {
    if !x.is_finite() || x >= n as f64 {
        n
    } else {
        (x.ceil() as usize).clamp(1, n)
    }
}

fn require_h_norm(h_prev_norm: Option<f64>, t: usize) -> Result<f64> {
    match h_prev_norm {
        Some(h) if h >= 0.0 => Ok(h),
        _ => Err(Error::InvalidArgument(format!(
            "previous step norm required at non-reset step {t}"
        ))),
    }
}

/// Gradient batch size `B_t^(g)`.
pub fn theoretical_batch_g(rule: &TheoreticalSchedule, t: usize, h_prev_norm: Option<f64>) -> Result<usize> {
    rule.validate()?;
    let (c, log) = rule.grad_constants();
    let eps2 = rule.eps * rule.eps;
    let raw = if t.is_multiple_of(rule.grad_epoch) {
        let m = rule.grad_bound.value();
        c * m * m * log * log / eps2
    } else {
        let h = require_h_norm(h_prev_norm, t)?;
        let l = rule.lipschitz_grad;
        c * l * l * rule.grad_epoch as f64 * h * h * log * log / eps2
    };
    Ok(clamp_batch(raw, rule.n))
}

/// Hessian batch size `B_t^(h)`. The Hessian-free variant uses a single size
/// at every step.
pub fn theoretical_batch_h(rule: &TheoreticalSchedule, t: usize, h_prev_norm: Option<f64>) -> Result<usize> {
    rule.validate()?;
    let tt = rule.budget as f64;
    let d = rule.dim as f64;
    let (l, rho, eps) = (rule.lipschitz_grad, rule.lipschitz_hess, rule.eps);
    let raw = match rule.variant {
        ScheduleVariant::Srvrc => {
            let log = (2.0 * tt * d / rule.xi).ln();
            if t.is_multiple_of(rule.hess_epoch) {
                800.0 * l * l * log * log / (rho * eps)
            } else {
                let h = require_h_norm(h_prev_norm, t)?;
                800.0 * rho * rule.hess_epoch as f64 * h * h * log * log / eps
            }
        }
        ScheduleVariant::HessianFree => {
            let log = (3.0 * tt * d / rule.xi).ln();
            1200.0 * l * l * log * log / (rho * eps)
        }
    };
    Ok(clamp_batch(raw, rule.n))
}

/// Epoch lengths `S^(g) = √(ρε)/L · √(n ∧ M²/ε²)` and
/// `S^(h) = √(n ∧ L/(ρε))`, each rounded up to at least 1.
pub fn default_epochs(
    n: usize,
    eps: f64,
    lipschitz_grad: f64,
    lipschitz_hess: f64,
    grad_bound: GradBound,
) -> (usize, usize) {
    let n = n as f64;
    let m = grad_bound.value();
    let s_g = (lipschitz_hess * eps).sqrt() / lipschitz_grad * n.min(m * m / (eps * eps)).sqrt();
    let s_h = n.min(lipschitz_grad / (lipschitz_hess * eps)).sqrt();
    let round = |s: f64| if s.is_finite() { (s.ceil() as usize).max(1) } else { 1 };
    (round(s_g), round(s_h))
}

/// `(B_t^(g), B_t^(h))` for the practical schedule.
pub fn practical_batch(rule: &PracticalSchedule, t: usize) -> (usize, usize) {
    let s = rule.epoch.max(1);
    if t.is_multiple_of(s) {
        (rule.grad_batch, rule.hess_batch)
    } else {
        ((rule.grad_batch / s).max(1), (rule.hess_batch / s).max(1))
    }
}

/// Running estimator state for one optimization run.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    v: Option<Vector>,
    u: Option<Matrix>,
    t: usize,
    grad_epoch: usize,
    hess_epoch: usize,
    last_h_norm: Option<f64>,
}

impl EstimatorState {
    pub fn new(grad_epoch: usize, hess_epoch: usize) -> Result<Self> {
        if grad_epoch == 0 || hess_epoch == 0 {
            return Err(Error::InvalidArgument("epoch lengths must be ≥ 1".into()));
        }
        Ok(Self {
            v: None,
            u: None,
            t: 0,
            grad_epoch,
            hess_epoch,
            last_h_norm: None,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn grad_epoch(&self) -> usize {
        self.grad_epoch
    }

    pub fn hess_epoch(&self) -> usize {
        self.hess_epoch
    }

    pub fn gradient(&self) -> Option<&Vector> {
        self.v.as_ref()
    }

    pub fn hessian(&self) -> Option<&Matrix> {
        self.u.as_ref()
    }

    pub fn last_h_norm(&self) -> Option<f64> {
        self.last_h_norm
    }

    pub fn is_grad_reset(&self) -> bool {
        self.t.is_multiple_of(self.grad_epoch)
    }

    pub fn is_hess_reset(&self) -> bool {
        self.t.is_multiple_of(self.hess_epoch)
    }

    /// Moves to the next iteration after a step of norm `h_norm`.
    pub fn advance(&mut self, h_norm: f64) {
        self.t += 1;
        self.last_h_norm = Some(h_norm);
    }

    /// Updates and returns `v_t`. At reset steps `x_prev` and `v_{t−1}` are
    /// not read.
    pub fn update_gradient<P, R>(
        &mut self,
        problem: &P,
        x: &Vector,
        x_prev: Option<&Vector>,
        batch_size: usize,
        rng: &mut R,
        counter: &mut OracleCounter,
    ) -> Result<&Vector>
    where
        P: FiniteSumProblem + ?Sized,
        R: Rng + ?Sized,
    {
        let batch = sample_multiset(rng, problem.num_components(), batch_size)?;
        let v = if self.is_grad_reset() {
            batch_gradient(problem, x, &batch, counter)?
        } else {
            let (prev_x, prev_v) = match (x_prev, self.v.as_ref()) {
                (Some(px), Some(pv)) => (px, pv),
                _ => {
                    return Err(Error::InvalidArgument(
                        "recursive gradient update needs x_prev and v_prev".into(),
                    ))
                }
            };
            if prev_x.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: x.len(),
                    got: prev_x.len(),
                });
            }
            let now = batch_gradient(problem, x, &batch, counter)?;
            let before = batch_gradient(problem, prev_x, &batch, counter)?;
            now - before + prev_v
        };
        Ok(self.v.insert(v))
    }

    /// Updates and returns `U_t`, with the same conventions as
    /// [`EstimatorState::update_gradient`].
    pub fn update_hessian<P, R>(
        &mut self,
        problem: &P,
        x: &Vector,
        x_prev: Option<&Vector>,
        batch_size: usize,
        rng: &mut R,
        counter: &mut OracleCounter,
    ) -> Result<&Matrix>
    where
        P: FiniteSumProblem + ?Sized,
        R: Rng + ?Sized,
    {
        let batch = sample_multiset(rng, problem.num_components(), batch_size)?;
        let u = if self.is_hess_reset() {
            batch_hessian(problem, x, &batch, counter)?
        } else {
            let (prev_x, prev_u) = match (x_prev, self.u.as_ref()) {
                (Some(px), Some(pu)) => (px, pu),
                _ => {
                    return Err(Error::InvalidArgument(
                        "recursive Hessian update needs x_prev and U_prev".into(),
                    ))
                }
            };
            if prev_x.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: x.len(),
                    got: prev_x.len(),
                });
            }
            let now = batch_hessian(problem, x, &batch, counter)?;
            let before = batch_hessian(problem, prev_x, &batch, counter)?;
            now - before + prev_u
        };
        Ok(self.u.insert(u))
    }
}
