//! Stochastic recursive variance-reduced cubic regularization for
//! nonconvex finite-sum minimization `F(x) = (1/n) Σ f_i(x)`.
//!
//! * [`problem`]: the finite-sum oracle trait, sampling and oracle counting.
//! * [`objectives`]: logistic regression with a nonconvex penalty, libsvm
//!   input, seeded synthetic problems.
//! * [`estimators`]: recursive gradient and Hessian estimators and their
//!   batch schedules.
//! * [`cubic`]: cubic model, exact solver, gradient sub- and finalsolver.
//! * [`drivers`]: SRVRC, its Hessian-free variant, CR and SCR.
//! * [`diagnostics`]: local-minimum certification and derivative checks.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cubic;
pub mod diagnostics;
pub mod drivers;
pub mod error;
pub mod estimators;
pub mod objectives;
pub mod problem;
pub mod trace;

pub use cubic::{CubicModel, CubicSolution, HessianOperator, SolveStatus};
pub use drivers::{
    run, run_cr, run_scr, run_srvrc, run_srvrc_free, Algorithm, ExitStatus, PenaltyPolicy, RunResult, SolverConfig,
};
pub use error::{Error, Result};
pub use problem::{FiniteSumProblem, GradBound, IndexBatch, Matrix, OracleCounter, ProblemConstants, Vector};
pub use trace::{RunTrace, TraceRow};
