//! Seeded synthetic nonconvex problems
//! `f_i(x) = ½ xᵀA_i x + b_iᵀx + α Σ_j x_j² / (1 + x_j²)`.
//!
//! Each `A_i` is a random positive semidefinite matrix rescaled to a spectral
//! norm drawn from `[0.5, 1]`, so the quadratic part of `F` is convex and the
//! penalty (curvature down to `−α/2`) supplies the nonconvexity. `b_i` is a
//! shared offset plus per-component noise.
//!
//! Analytic constants: `L = 1 + 2α`, `ρ = α · sup|r'''|` (floored at
//! [`MIN_HESS_LIPSCHITZ`] so quadratic instances still carry a positive `ρ`).
//! The components have different Hessians, so `‖∇f_i − ∇F‖` grows without
//! bound in `x` and `M` is reported as unbounded.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::penalty;
use crate::error::{Error, Result};
use crate::problem::{FiniteSumProblem, GradBound, Matrix, ProblemConstants, Vector};

pub const MIN_HESS_LIPSCHITZ: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    /// Weight `α ≥ 0` of the nonconvex penalty.
    pub nonconvexity: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    hessians: Vec<Matrix>,
    offsets: Vec<Vector>,
    alpha: f64,
    constants: ProblemConstants,
}

impl SyntheticProblem {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self> {
        if spec.n == 0 || spec.d == 0 {
            return Err(Error::InvalidArgument("n and d must be at least 1".into()));
        }
        let d = spec.d;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        let shared = Vector::from_fn(d, |_, _| normal(&mut rng));
        let mut hessians = Vec::with_capacity(spec.n);
        let mut offsets = Vec::with_capacity(spec.n);
        for _ in 0..spec.n {
            let g = Matrix::from_fn(d, d, |_, _| normal(&mut rng));
            let s = &g * g.transpose();
            let s = (&s + s.transpose()) * 0.5;
            let top = SymmetricEigen::new(s.clone()).eigenvalues.max();
            let target: f64 = rng.random_range(0.5..1.0);
            let a = if top > 0.0 { s * (target / top) } else { s };
            hessians.push(a);
            offsets.push(&shared + Vector::from_fn(d, |_, _| normal(&mut rng)));
        }
        Self::from_parts(hessians, offsets, spec.nonconvexity)
    }

    /// Builds a problem from explicit symmetric `A_i` and `b_i`.
    pub fn from_parts(hessians: Vec<Matrix>, offsets: Vec<Vector>, alpha: f64) -> Result<Self> {
        if hessians.is_empty() || hessians.len() != offsets.len() {
            return Err(Error::InvalidArgument("need one offset per Hessian".into()));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("nonconvexity must be ≥ 0, got {alpha}")));
        }
        let d = offsets[0].len();
        let mut top = 0.0f64;
        for (a, b) in hessians.iter().zip(&offsets) {
            if a.nrows() != d || a.ncols() != d || b.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: b.len(),
                });
            }
            let asym = crate::problem::asymmetry(a);
            if asym > 1e-12 * (1.0 + a.amax()) {
                return Err(Error::NotSymmetric(asym));
            }
            let eig = SymmetricEigen::new(a.clone()).eigenvalues;
            top = top.max(eig.amax());
        }
        let constants = ProblemConstants {
            lipschitz_grad: top + alpha * penalty::SECOND_BOUND,
            lipschitz_hess: (alpha * penalty::third_bound()).max(MIN_HESS_LIPSCHITZ),
            grad_bound: if hessians.iter().all(|a| a == &hessians[0]) {
                let mean = offsets.iter().fold(Vector::zeros(d), |acc, b| acc + b) / offsets.len() as f64;
                GradBound::Bounded(offsets.iter().map(|b| (b - &mean).norm()).fold(0.0, f64::max))
            } else {
                GradBound::Unbounded
            },
        };
        Ok(Self {
            hessians,
            offsets,
            alpha,
            constants,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `(Ā, b̄)`, the averaged quadratic part.
    pub fn mean_quadratic(&self) -> (Matrix, Vector) {
        let n = self.hessians.len() as f64;
        let d = self.offsets[0].len();
        let a = self.hessians.iter().fold(Matrix::zeros(d, d), |acc, a| acc + a) / n;
        let b = self.offsets.iter().fold(Vector::zeros(d), |acc, b| acc + b) / n;
        (a, b)
    }

    fn penalty_curvature(&self, x: &Vector) -> Vector {
        x.map(|xj| self.alpha * penalty::second(xj))
    }
}

impl FiniteSumProblem for SyntheticProblem {
    fn num_components(&self) -> usize {
        self.hessians.len()
    }

    fn dim(&self) -> usize {
        self.offsets[0].len()
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn component_value(&self, i: usize, x: &Vector) -> f64 {
        let quad = 0.5 * x.dot(&(&self.hessians[i] * x));
        let pen: f64 = x.iter().map(|&xj| penalty::value(xj)).sum();
        quad + self.offsets[i].dot(x) + self.alpha * pen
    }

    fn component_gradient(&self, i: usize, x: &Vector) -> Vector {
        &self.hessians[i] * x + &self.offsets[i] + x.map(|xj| self.alpha * penalty::first(xj))
    }

    fn component_hessian(&self, i: usize, x: &Vector) -> Result<Matrix> {
        let mut h = self.hessians[i].clone();
        for (j, c) in self.penalty_curvature(x).iter().enumerate() {
            h[(j, j)] += c;
        }
        Ok(h)
    }

    fn component_hvp(&self, i: usize, x: &Vector, v: &Vector) -> Vector {
        &self.hessians[i] * v + self.penalty_curvature(x).component_mul(v)
    }

    fn batch_hvp_operator<'a>(
        &'a self,
        x: &Vector,
        indices: &'a [usize],
    ) -> Box<dyn Fn(&Vector) -> Vector + Send + Sync + 'a> {
        let d = self.dim();
        let mut avg = Matrix::zeros(d, d);
        for &i in indices {
            avg += &self.hessians[i];
        }
        avg /= indices.len() as f64;
        let curvature = self.penalty_curvature(x);
        Box::new(move |v: &Vector| &avg * v + curvature.component_mul(v))
    }
}
