//! Outer loops: SRVRC with exact cubic steps, its Hessian-free variant, and
//! the CR / SCR baselines.
//!
//! Every driver evaluates `F(x_t)` with the full batch for the trace. Those
//! evaluations are tallied in [`RunResult::diagnostic_value_calls`] and never
//! mixed into the stochastic oracle counters.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cubic::{
    cubic_finalsolver, cubic_subsolver, finalsolver_step_limit, solve_exact, CubicModel, FnOperator, SubsolverParams,
    FINALSOLVER_MAX_ITERS,
};
use crate::error::{Error, Result};
use crate::estimators::{
    default_epochs, practical_batch, theoretical_batch_g, theoretical_batch_h, EstimatorState, PracticalSchedule,
    ScheduleVariant, TheoreticalSchedule,
};
use crate::problem::{full_value, sample_multiset, FiniteSumProblem, GradBound, OracleCounter, Vector};
use crate::trace::{RunTrace, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Srvrc,
    SrvrcFree,
    Cr,
    Scr,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Srvrc => "srvrc",
            Algorithm::SrvrcFree => "srvrc_free",
            Algorithm::Cr => "cr",
            Algorithm::Scr => "scr",
        }
    }

    /// Constant `c` in the iteration budget `T = c·Δ_F·√ρ·ε^{−3/2}`.
    pub fn budget_constant(self) -> f64 {
        match self {
            Algorithm::SrvrcFree => 25.0,
            _ => 40.0,
        }
    }
}

/// ARC-style penalty adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptivePenalty {
    pub initial: f64,
    pub gamma_inc: f64,
    pub gamma_dec: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub floor: f64,
    pub cap: f64,
}

impl Default for AdaptivePenalty {
    fn default() -> Self {
        Self {
            initial: 1.0,
            gamma_inc: 2.0,
            gamma_dec: 0.5,
            eta1: 0.1,
            eta2: 0.9,
            floor: 1e-8,
            cap: 1e12,
        }
    }
}

impl AdaptivePenalty {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial > 0.0
            && self.gamma_inc > 1.0
            && self.gamma_dec > 0.0
            && self.gamma_dec < 1.0
            && self.eta1 > 0.0
            && self.eta1 <= self.eta2
            && self.eta2 < 1.0
            && self.floor > 0.0
            && self.floor <= self.cap
            && self.cap.is_finite();
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid adaptive penalty parameters {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyPolicy {
    /// `M_t = 4ρ`.
    Theoretical,
    Fixed {
        value: f64,
    },
    Adaptive(AdaptivePenalty),
}

/// Outcome of [`adaptive_penalty_update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyUpdate {
    pub penalty: f64,
    pub accepted: bool,
}

/// `ratio ≥ η₂` shrinks `M`, `η₁ ≤ ratio < η₂` keeps it, anything else
/// (including a NaN ratio) grows `M` and rejects the step. The result is
/// clamped to `[floor, cap]`.
pub fn adaptive_penalty_update(penalty: f64, ratio: f64, params: &AdaptivePenalty) -> PenaltyUpdate {
    let (next, accepted) = if ratio >= params.eta2 {
        (penalty * params.gamma_dec, true)
    } else if ratio >= params.eta1 {
        (penalty, true)
    } else {
        (penalty * params.gamma_inc, false)
    };
    PenaltyUpdate {
        penalty: next.clamp(params.floor, params.cap),
        accepted,
    }
}

/// `(F(x) − F(x + h)) / (−m(h))`, or NaN when the model predicts no decrease.
pub fn reduction_ratio(f_x: f64, f_new: f64, m_value: f64) -> f64 {
    if m_value < 0.0 {
        (f_x - f_new) / -m_value
    } else {
        f64::NAN
    }
}

/// Iteration budget `⌈c·Δ_F·√ρ·ε^{−3/2}⌉`, at least 1.
pub fn iterations_for_gap(algorithm: Algorithm, delta_f: f64, rho: f64, eps: f64) -> Result<usize> {
    if !(delta_f >= 0.0 && delta_f.is_finite() && rho > 0.0 && eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need Δ_F ≥ 0, ρ > 0, ε > 0 (got {delta_f}, {rho}, {eps})"
        )));
    }
    let t = algorithm.budget_constant() * delta_f * rho.sqrt() / eps.powf(1.5);
    Ok((t.ceil() as usize).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchConfig {
    /// High-probability batch sizes. Epoch lengths default to
    /// [`default_epochs`].
    Theoretical {
        #[serde(default)]
        grad_epoch: Option<usize>,
        #[serde(default)]
        hess_epoch: Option<usize>,
    },
    Practical(PracticalSchedule),
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig::Theoretical {
            grad_epoch: None,
            hess_epoch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub eps: f64,
    /// Failure probability `ξ`.
    pub xi: f64,
    /// Iteration budget `T`.
    pub max_iters: usize,
    /// Overrides for the problem's own constants.
    pub lipschitz_grad: Option<f64>,
    pub lipschitz_hess: Option<f64>,
    pub grad_bound: Option<GradBound>,
    pub penalty: PenaltyPolicy,
    pub batch: BatchConfig,
    /// Subsolver step size; `1/(16L)` when unset.
    pub subsolver_step: Option<f64>,
    pub subsolver_eps_prime: f64,
    /// Subsolver failure probability; `ξ/(3T)` when unset.
    pub subsolver_delta_prime: Option<f64>,
    pub finalsolver_max_iters: usize,
    /// Secular-equation tolerance of the exact solver.
    pub exact_tol: f64,
    /// Hessian-free variant only: `false` draws a fresh gradient subsample at
    /// every step (same sizes, no recursion).
    pub recursive_gradient: bool,
    /// Record `x_{t+1}` after every iteration.
    pub keep_iterates: bool,
    /// Starting point; the origin when unset.
    pub x0: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps: 1e-2,
            xi: 0.1,
            max_iters: 100,
            lipschitz_grad: None,
            lipschitz_hess: None,
            grad_bound: None,
            penalty: PenaltyPolicy::Theoretical,
            batch: BatchConfig::default(),
            subsolver_step: None,
            subsolver_eps_prime: 0.5,
            subsolver_delta_prime: None,
            finalsolver_max_iters: FINALSOLVER_MAX_ITERS,
            exact_tol: 1e-12,
            recursive_gradient: true,
            keep_iterates: false,
            x0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub x_out: Vector,
    pub exit: ExitStatus,
    /// Outer iterations performed, `T*`.
    pub iterations: usize,
    pub trace: RunTrace,
    pub counters: OracleCounter,
    /// Component value evaluations spent on full-batch diagnostics.
    pub diagnostic_value_calls: u64,
}

/// Constants and starting point after applying config overrides.
#[derive(Debug, Clone)]
struct Setup {
    n: usize,
    d: usize,
    lipschitz_grad: f64,
    rho: f64,
    grad_bound: GradBound,
    x0: Vector,
}

fn setup<P: FiniteSumProblem + ?Sized>(problem: &P, config: &SolverConfig) -> Result<Setup> {
    if !(config.eps > 0.0 && config.eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ε must be positive, got {}",
            config.eps
        )));
    }
    if !(config.xi > 0.0 && config.xi < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "ξ must lie in (0, 1), got {}",
            config.xi
        )));
    }
    if !(config.exact_tol > 0.0) {
        return Err(Error::InvalidArgument("exact solver tolerance must be positive".into()));
    }
    let c = problem.constants();
    let lipschitz_grad = config.lipschitz_grad.unwrap_or(c.lipschitz_grad);
    let rho = config.lipschitz_hess.unwrap_or(c.lipschitz_hess);
    if !(lipschitz_grad > 0.0 && lipschitz_grad.is_finite() && rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "L and ρ must be positive and finite, got {lipschitz_grad} and {rho}"
        )));
    }
    match config.penalty {
        PenaltyPolicy::Fixed { value } if !(value > 0.0 && value.is_finite()) => {
            return Err(Error::InvalidArgument(format!(
                "fixed penalty must be positive, got {value}"
            )))
        }
        PenaltyPolicy::Adaptive(a) => a.validate()?,
        _ => {}
    }
    let d = problem.dim();
    let x0 = match &config.x0 {
        Some(v) if v.len() != d => {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            })
        }
        Some(v) => Vector::from_column_slice(v),
        None => Vector::zeros(d),
    };
    Ok(Setup {
        n: problem.num_components(),
        d,
        lipschitz_grad,
        rho,
        grad_bound: config.grad_bound.unwrap_or(c.grad_bound),
        x0,
    })
}

fn initial_penalty(policy: &PenaltyPolicy, rho: f64) -> f64 {
    match policy {
        PenaltyPolicy::Theoretical => 4.0 * rho,
        PenaltyPolicy::Fixed { value } => *value,
        PenaltyPolicy::Adaptive(a) => a.initial,
    }
}

/// Batch-size rule after resolving config against the problem.
#[derive(Debug, Clone, Copy)]
enum Sizes {
    Theoretical(TheoreticalSchedule),
    Practical(PracticalSchedule),
    /// Hessian-free practical mode: gradient per the schedule, Hessian constant.
    PracticalFree(PracticalSchedule),
    Fixed(usize, usize),
}

impl Sizes {
    fn resolve(config: &SolverConfig, s: &Setup, variant: ScheduleVariant) -> Result<Self> {
        Ok(match config.batch {
            BatchConfig::Theoretical { grad_epoch, hess_epoch } => {
                let (sg, sh) = default_epochs(s.n, config.eps, s.lipschitz_grad, s.rho, s.grad_bound);
                let grad_epoch = grad_epoch.unwrap_or(sg);
                let hess_epoch = hess_epoch.unwrap_or(sh);
                if grad_epoch == 0 || hess_epoch == 0 {
                    return Err(Error::InvalidArgument("epoch lengths must be at least 1".into()));
                }
                Sizes::Theoretical(TheoreticalSchedule {
                    variant,
                    n: s.n,
                    dim: s.d,
                    eps: config.eps,
                    xi: config.xi,
                    budget: config.max_iters.max(1),
                    lipschitz_grad: s.lipschitz_grad,
                    lipschitz_hess: s.rho,
                    grad_bound: s.grad_bound,
                    grad_epoch,
                    hess_epoch,
                })
            }
            BatchConfig::Practical(p) => {
                if p.epoch == 0 || p.grad_batch == 0 || p.hess_batch == 0 {
                    return Err(Error::InvalidArgument(format!("invalid practical schedule {p:?}")));
                }
                let p = PracticalSchedule {
                    grad_batch: p.grad_batch.min(s.n),
                    hess_batch: p.hess_batch.min(s.n),
                    epoch: p.epoch,
                };
                match variant {
                    ScheduleVariant::Srvrc => Sizes::Practical(p),
                    ScheduleVariant::HessianFree => Sizes::PracticalFree(p),
                }
            }
        })
    }

    fn epochs(&self) -> (usize, usize) {
        match self {
            Sizes::Theoretical(r) => (r.grad_epoch, r.hess_epoch),
            Sizes::Practical(p) => (p.epoch, p.epoch),
            Sizes::PracticalFree(p) => (p.epoch, 1),
            Sizes::Fixed(..) => (1, 1),
        }
    }

    fn at(&self, t: usize, h_prev: Option<f64>) -> Result<(usize, usize)> {
        Ok(match self {
            Sizes::Theoretical(r) => (theoretical_batch_g(r, t, h_prev)?, theoretical_batch_h(r, t, h_prev)?),
            Sizes::Practical(p) => practical_batch(p, t),
            Sizes::PracticalFree(p) => (practical_batch(p, t).0, p.hess_batch),
            Sizes::Fixed(g, h) => (*g, *h),
        })
    }
}

/// Trace bookkeeping shared by all drivers.
struct Recorder {
    start: Instant,
    trace: RunTrace,
    keep_iterates: bool,
    diagnostic_value_calls: u64,
}

impl Recorder {
    fn new(keep_iterates: bool) -> Self {
        Self {
            start: Instant::now(),
            trace: RunTrace::default(),
            keep_iterates,
            diagnostic_value_calls: 0,
        }
    }

    fn value<P: FiniteSumProblem + ?Sized>(&mut self, problem: &P, x: &Vector, t: usize) -> Result<f64> {
        self.diagnostic_value_calls += problem.num_components() as u64;
        let f = full_value(problem, x);
        if f.is_finite() {
            Ok(f)
        } else {
            Err(Error::NonFiniteObjective(t))
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &mut self,
        t: usize,
        f: f64,
        h_norm: f64,
        m_value: f64,
        bg: usize,
        bh: usize,
        penalty: f64,
        c: &OracleCounter,
    ) {
        self.trace.rows.push(TraceRow {
            t,
            f,
            h_norm,
            m_value,
            grad_batch: bg,
            hess_batch: bh,
            penalty,
            grad_calls: c.grad_calls,
            hess_calls: c.hess_calls,
            hvp_calls: c.hvp_calls,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
    }

    fn finish(self, x_out: Vector, exit: ExitStatus, counters: OracleCounter) -> RunResult {
        RunResult {
            x_out,
            exit,
            iterations: self.trace.rows.len(),
            trace: self.trace,
            counters,
            diagnostic_value_calls: self.diagnostic_value_calls,
        }
    }
}

/// Current iterate plus the bookkeeping needed to take or reject a step.
struct Iterate {
    x: Vector,
    x_prev: Option<Vector>,
    f: f64,
    penalty: f64,
}

impl Iterate {
    /// Applies the penalty policy to the trial step `h` and moves `x` if the
    /// step is accepted. Returns whether it was.
    fn step<P: FiniteSumProblem + ?Sized>(
        &mut self,
        problem: &P,
        policy: &PenaltyPolicy,
        h: &Vector,
        m_value: f64,
        t: usize,
        rec: &mut Recorder,
    ) -> Result<bool> {
        let trial = &self.x + h;
        let f_new = rec.value(problem, &trial, t + 1)?;
        let accepted = match policy {
            PenaltyPolicy::Adaptive(params) => {
                let up = adaptive_penalty_update(self.penalty, reduction_ratio(self.f, f_new, m_value), params);
                self.penalty = up.penalty;
                up.accepted
            }
            _ => true,
        };
        if accepted {
            self.x_prev = Some(std::mem::replace(&mut self.x, trial));
            self.f = f_new;
        } else {
            self.x_prev = Some(self.x.clone());
        }
        if rec.keep_iterates {
            rec.trace.iterates.push(self.x.clone());
        }
        Ok(accepted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exact {
    Srvrc,
    Scr,
    Cr,
}

fn run_exact<P, R>(problem: &P, config: &SolverConfig, rng: &mut R, kind: Exact) -> Result<RunResult>
where
    P: FiniteSumProblem + ?Sized,
    R: Rng + ?Sized,
{
    let s = setup(problem, config)?;
    let sizes = match kind {
        Exact::Srvrc => Sizes::resolve(config, &s, ScheduleVariant::Srvrc)?,
        Exact::Cr => Sizes::Fixed(s.n, s.n),
        Exact::Scr => match config.batch {
            BatchConfig::Practical(p) if p.grad_batch > 0 && p.hess_batch > 0 => {
                Sizes::Fixed(p.grad_batch.min(s.n), p.hess_batch.min(s.n))
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "SCR needs explicit positive batch sizes (practical batch rule)".into(),
                ))
            }
        },
    };
    let (sg, sh) = sizes.epochs();
    let mut state = EstimatorState::new(sg, sh)?;
    let mut counters = OracleCounter::new();
    let mut rec = Recorder::new(config.keep_iterates);
    let radius = (config.eps / s.rho).sqrt();
    let f0 = rec.value(problem, &s.x0, 0)?;
    let mut it = Iterate {
        x: s.x0,
        x_prev: None,
        f: f0,
        penalty: initial_penalty(&config.penalty, s.rho),
    };

    for t in 0..config.max_iters {
        let (bg, bh) = sizes.at(t, state.last_h_norm())?;
        let v = state
            .update_gradient(problem, &it.x, it.x_prev.as_ref(), bg, rng, &mut counters)?
            .clone();
        let u = state
            .update_hessian(problem, &it.x, it.x_prev.as_ref(), bh, rng, &mut counters)?
            .clone();
        let penalty = it.penalty;
        let model = CubicModel::new(v, u, penalty, s.lipschitz_grad)?;
        let sol = solve_exact(&model, config.exact_tol)?;
        let h_norm = sol.h.norm();
        rec.row(t, it.f, h_norm, sol.m_value, bg, bh, penalty, &counters);
        let accepted = it.step(problem, &config.penalty, &sol.h, sol.m_value, t, &mut rec)?;
        state.advance(if accepted { h_norm } else { 0.0 });
        if h_norm <= radius {
            return Ok(rec.finish(it.x, ExitStatus::Converged, counters));
        }
    }
    Ok(rec.finish(it.x, ExitStatus::BudgetExhausted, counters))
}

/// SRVRC: recursive gradient and Hessian estimators, exact cubic steps, stop
/// at the first step with `‖h_t‖ ≤ √(ε/ρ)`.
pub fn run_srvrc<P, R>(problem: &P, config: &SolverConfig, rng: &mut R) -> Result<RunResult>
where
    P: FiniteSumProblem + ?Sized,
    R: Rng + ?Sized,
{
    run_exact(problem, config, rng, Exact::Srvrc)
}

/// Deterministic cubic regularization with full gradients and Hessians.
pub fn run_cr<P: FiniteSumProblem + ?Sized>(problem: &P, config: &SolverConfig) -> Result<RunResult> {
    // full batches never touch the rng
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    run_exact(problem, config, &mut rng, Exact::Cr)
}

/// Subsampled cubic regularization: fresh batches of the fixed sizes given by
/// the practical batch rule's base sizes at every step.
pub fn run_scr<P, R>(problem: &P, config: &SolverConfig, rng: &mut R) -> Result<RunResult>
where
    P: FiniteSumProblem + ?Sized,
    R: Rng + ?Sized,
{
    run_exact(problem, config, rng, Exact::Scr)
}

/// Hessian-free SRVRC. Each step solves the cubic model with the gradient
/// subsolver on a subsampled HVP operator. When the subsolver cannot reach
/// `m < −4ε^{3/2}/√ρ`, the finalsolver takes one last step and the run ends.
pub fn run_srvrc_free<P, R>(problem: &P, config: &SolverConfig, rng: &mut R) -> Result<RunResult>
where
    P: FiniteSumProblem + ?Sized,
    R: Rng + ?Sized,
{
    let s = setup(problem, config)?;
    if !(config.subsolver_eps_prime > 0.0 && config.subsolver_eps_prime < 1.0) {
        return Err(Error::InvalidArgument("ε' must lie in (0, 1)".into()));
    }
    let sizes = Sizes::resolve(config, &s, ScheduleVariant::HessianFree)?;
    let grad_epoch = if config.recursive_gradient { sizes.epochs().0 } else { 1 };
    let mut state = EstimatorState::new(grad_epoch, 1)?;
    let mut counters = OracleCounter::new();
    let mut rec = Recorder::new(config.keep_iterates);
    let step_size = config.subsolver_step.unwrap_or(1.0 / (16.0 * s.lipschitz_grad));
    let params = SubsolverParams {
        step_size,
        zeta: (config.eps / s.rho).sqrt(),
        eps_prime: config.subsolver_eps_prime,
        delta_prime: config
            .subsolver_delta_prime
            .unwrap_or(config.xi / (3.0 * config.max_iters.max(1) as f64)),
    };
    let threshold = -4.0 * config.eps.powf(1.5) / s.rho.sqrt();
    let f0 = rec.value(problem, &s.x0, 0)?;
    let mut it = Iterate {
        x: s.x0,
        x_prev: None,
        f: f0,
        penalty: initial_penalty(&config.penalty, s.rho),
    };

    for t in 0..config.max_iters {
        let (bg, bh) = sizes.at(t, state.last_h_norm())?;
        let v = state
            .update_gradient(problem, &it.x, it.x_prev.as_ref(), bg, rng, &mut counters)?
            .clone();
        let batch = sample_multiset(rng, s.n, bh)?;
        let op = FnOperator::new(s.d, problem.batch_hvp_operator(&it.x, batch.indices()));
        let penalty = it.penalty;
        let model = CubicModel::new(v, op, penalty, s.lipschitz_grad)?;
        let sol = cubic_subsolver(&model, &params, rng)?;

        if sol.m_value < threshold {
            counters.hvp_calls += model.a.applications() * bh as u64;
            let h_norm = sol.h.norm();
            rec.row(t, it.f, h_norm, sol.m_value, bg, bh, penalty, &counters);
            let accepted = it.step(problem, &config.penalty, &sol.h, sol.m_value, t, &mut rec)?;
            state.advance(if accepted { h_norm } else { 0.0 });
            continue;
        }

        let final_step = step_size.min(0.5 * finalsolver_step_limit(&model));
        let fin = cubic_finalsolver(&model, final_step, config.eps, config.finalsolver_max_iters)?;
        counters.hvp_calls += model.a.applications() * bh as u64;
        rec.row(t, it.f, fin.h.norm(), fin.m_value, bg, bh, penalty, &counters);
        let x_out = &it.x + &fin.h;
        if rec.keep_iterates {
            rec.trace.iterates.push(x_out.clone());
        }
        return Ok(rec.finish(x_out, ExitStatus::Converged, counters));
    }
    Ok(rec.finish(it.x, ExitStatus::BudgetExhausted, counters))
}

/// Dispatches on `algorithm`. CR ignores `rng`.
pub fn run<P, R>(algorithm: Algorithm, problem: &P, config: &SolverConfig, rng: &mut R) -> Result<RunResult>
where
    P: FiniteSumProblem + ?Sized,
    R: Rng + ?Sized,
{
    match algorithm {
        Algorithm::Srvrc => run_srvrc(problem, config, rng),
        Algorithm::SrvrcFree => run_srvrc_free(problem, config, rng),
        Algorithm::Cr => run_cr(problem, config),
        Algorithm::Scr => run_scr(problem, config, rng),
    }
}
