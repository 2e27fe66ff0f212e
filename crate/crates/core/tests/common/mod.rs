#![allow(dead_code)]

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;
use srvrc::objectives::logreg::Row;
use srvrc::objectives::{BinaryLogReg, MulticlassLogReg, MulticlassPenalty};
use srvrc::problem::GradBound;
use srvrc::{CubicModel, FiniteSumProblem, Matrix, ProblemConstants, Result, Vector};

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_vector<R: Rng>(rng: &mut R, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| normal(rng))
}

pub fn random_symmetric<R: Rng>(rng: &mut R, d: usize) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| normal(rng));
    (&g + g.transpose()) * 0.5
}

pub fn spectral_norm(a: &Matrix) -> f64 {
    SymmetricEigen::new(a.clone()).eigenvalues.amax()
}

pub fn min_eig(a: &Matrix) -> f64 {
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal<R: Rng>(rng: &mut R, d: usize) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| normal(rng));
    g.qr().q()
}

/// Gaussian `b` and symmetric `A`, `τ ∈ [0.5, 2)`, `β = ‖A‖₂`.
pub fn random_model<R: Rng>(rng: &mut R, d: usize) -> CubicModel<Matrix> {
    let a = random_symmetric(rng, d);
    let beta = spectral_norm(&a);
    let tau = rng.random_range(0.5..2.0);
    CubicModel::new(random_vector(rng, d), a, tau, beta).unwrap()
}

/// A model in the hard case: `b` has no weight on the (negative) bottom
/// eigenvector and is small enough that the boundary solution needs an
/// eigenvector component.
pub fn hard_case_model<R: Rng>(rng: &mut R, d: usize) -> CubicModel<Matrix> {
    let q = random_orthogonal(rng, d);
    let mut lambdas: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
    lambdas[0] = -rng.random_range(0.5..1.5);
    let a = &q * Matrix::from_diagonal(&Vector::from_vec(lambdas.clone())) * q.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let mut g = random_vector(rng, d) * 0.05;
    g[0] = 0.0;
    let b = &q * g;
    let beta = spectral_norm(&a);
    CubicModel::new(b, a, 1.0, beta).unwrap()
}

/// Dense random rows with `density` fraction of nonzeros, at least one per row.
pub fn random_rows<R: Rng>(rng: &mut R, n: usize, d: usize, density: f64) -> Vec<Row> {
    (0..n)
        .map(|_| {
            let mut row: Row = Vec::new();
            for j in 0..d {
                if rng.random::<f64>() < density {
                    row.push((j, normal(rng)));
                }
            }
            if row.is_empty() {
                row.push((rng.random_range(0..d), normal(rng)));
            }
            row
        })
        .collect()
}

pub fn binary_problem<R: Rng>(rng: &mut R, n: usize, d: usize, lambda: f64) -> BinaryLogReg {
    let rows = random_rows(rng, n, d, 0.6);
    let labels = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    BinaryLogReg::from_parts(rows, labels, d, lambda).unwrap()
}

pub fn multiclass_problem<R: Rng>(rng: &mut R, n: usize, d: usize, m: usize, lambda: f64) -> MulticlassLogReg {
    let rows = random_rows(rng, n, d, 0.6);
    let classes = (0..n).map(|_| rng.random_range(0..m)).collect();
    MulticlassLogReg::from_parts(rows, classes, d, m, lambda, MulticlassPenalty::Nonconvex).unwrap()
}

/// `f_i(x) = ⟨c_i, x⟩`.
pub struct LinearProblem {
    pub coefficients: Vec<Vector>,
}

impl FiniteSumProblem for LinearProblem {
    fn num_components(&self) -> usize {
        self.coefficients.len()
    }

    fn dim(&self) -> usize {
        self.coefficients[0].len()
    }

    fn constants(&self) -> ProblemConstants {
        ProblemConstants {
            lipschitz_grad: 1.0,
            lipschitz_hess: 1.0,
            grad_bound: GradBound::Unbounded,
        }
    }

    fn component_value(&self, i: usize, x: &Vector) -> f64 {
        self.coefficients[i].dot(x)
    }

    fn component_gradient(&self, i: usize, _x: &Vector) -> Vector {
        self.coefficients[i].clone()
    }

    fn component_hessian(&self, _i: usize, x: &Vector) -> Result<Matrix> {
        Ok(Matrix::zeros(x.len(), x.len()))
    }

    fn component_hvp(&self, _i: usize, x: &Vector, _v: &Vector) -> Vector {
        Vector::zeros(x.len())
    }
}

/// Wraps a problem and adds 1 to the first coordinate of every component
/// gradient.
pub struct CorruptedGradient<P>(pub P);

impl<P: FiniteSumProblem> FiniteSumProblem for CorruptedGradient<P> {
    fn num_components(&self) -> usize {
        self.0.num_components()
    }

    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn constants(&self) -> ProblemConstants {
        self.0.constants()
    }

    fn component_value(&self, i: usize, x: &Vector) -> f64 {
        self.0.component_value(i, x)
    }

    fn component_gradient(&self, i: usize, x: &Vector) -> Vector {
        let mut g = self.0.component_gradient(i, x);
        g[0] += 1.0;
        g
    }

    fn component_hessian(&self, i: usize, x: &Vector) -> Result<Matrix> {
        self.0.component_hessian(i, x)
    }

    fn component_hvp(&self, i: usize, x: &Vector, v: &Vector) -> Vector {
        self.0.component_hvp(i, x, v)
    }
}
