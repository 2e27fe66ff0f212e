//! Logistic regression with the bounded nonconvex penalty
//! `λ Σ_j w_j² / (1 + w_j²)`.
//!
//! The data term is the negative log-likelihood, so each objective is bounded
//! below. Every component carries the full penalty, which makes the full
//! objective `mean(loss_i) + penalty(w)`.

use serde::{Deserialize, Serialize};

use super::libsvm::LibsvmDataset;
use super::penalty;
use crate::error::{Error, Result};
use crate::problem::{FiniteSumProblem, GradBound, Matrix, ProblemConstants, Vector};

/// Largest `m·d` for which the multiclass objective builds dense Hessians.
pub const DENSE_HESSIAN_LIMIT: usize = 2000;

/// Sparse row as `(zero-based feature, value)` pairs.
pub type Row = Vec<(usize, f64)>;

fn zero_based_rows(dataset: &LibsvmDataset) -> Vec<Row> {
    dataset
        .rows()
        .iter()
        .map(|r| r.features.iter().map(|&(j, v)| (j - 1, v)).collect())
        .collect()
}

fn max_row_norm(rows: &[Row]) -> f64 {
    rows.iter()
        .map(|r| r.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn sparse_dot(row: &[(usize, f64)], x: &[f64]) -> f64 {
    row.iter().map(|&(j, v)| v * x[j]).sum()
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// Binary logistic regression, labels in `{0, 1}`.
#[derive(Debug, Clone)]
pub struct BinaryLogReg {
    rows: Vec<Row>,
    labels: Vec<f64>,
    dim: usize,
    lambda: f64,
    constants: ProblemConstants,
}

impl BinaryLogReg {
    pub fn new(dataset: &LibsvmDataset, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let labels = dataset.binary_labels()?;
        Self::from_parts(zero_based_rows(dataset), labels, dataset.dim(), lambda)
    }

    /// Rows use zero-based feature indices.
    pub fn from_parts(rows: Vec<Row>, labels: Vec<f64>, dim: usize, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(Error::InvalidArgument("need one label per nonempty row set".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::LabelOutOfRange("binary labels must be 0 or 1".into()));
        }
        if rows.iter().flatten().any(|&(j, _)| j >= dim) {
            return Err(Error::InvalidArgument("feature index exceeds dimension".into()));
        }
        let r = max_row_norm(&rows);
        // loss curvature φ(1−φ) ≤ 1/4, its derivative |φ(1−φ)(1−2φ)| ≤ 1/(6√3)
        let constants = ProblemConstants {
            lipschitz_grad: r * r / 4.0 + lambda * penalty::SECOND_BOUND,
            lipschitz_hess: r.powi(3) / (6.0 * 3f64.sqrt()) + lambda * penalty::third_bound(),
            grad_bound: GradBound::Bounded(2.0 * r),
        };
        Ok(Self {
            rows,
            labels,
            dim,
            lambda,
            constants,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn penalty_value(&self, w: &Vector) -> f64 {
        self.lambda * w.iter().map(|&wj| penalty::value(wj)).sum::<f64>()
    }

    /// Diagonal of the penalty Hessian.
    fn penalty_curvature(&self, w: &Vector) -> Vector {
        w.map(|wj| self.lambda * penalty::second(wj))
    }
}

impl FiniteSumProblem for BinaryLogReg {
    fn num_components(&self) -> usize {
        self.rows.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn component_value(&self, i: usize, w: &Vector) -> f64 {
        let z = sparse_dot(&self.rows[i], w.as_slice());
        softplus(z) - self.labels[i] * z + self.penalty_value(w)
    }

    fn component_gradient(&self, i: usize, w: &Vector) -> Vector {
        let z = sparse_dot(&self.rows[i], w.as_slice());
        let r = sigmoid(z) - self.labels[i];
        let mut g = w.map(|wj| self.lambda * penalty::first(wj));
        for &(j, v) in &self.rows[i] {
            g[j] += r * v;
        }
        g
    }

    fn component_hessian(&self, i: usize, w: &Vector) -> Result<Matrix> {
        let z = sparse_dot(&self.rows[i], w.as_slice());
        let p = sigmoid(z);
        let s = p * (1.0 - p);
        let mut h = Matrix::from_diagonal(&self.penalty_curvature(w));
        let row = &self.rows[i];
        for (a, &(ja, va)) in row.iter().enumerate() {
            for &(jb, vb) in &row[a..] {
                let e = s * (va * vb);
                h[(ja, jb)] += e;
                if ja != jb {
                    h[(jb, ja)] += e;
                }
            }
        }
        Ok(h)
    }

    fn component_hvp(&self, i: usize, w: &Vector, v: &Vector) -> Vector {
        let row = &self.rows[i];
        let p = sigmoid(sparse_dot(row, w.as_slice()));
        let coef = p * (1.0 - p) * sparse_dot(row, v.as_slice());
        let mut out = self.penalty_curvature(w).component_mul(v);
        for &(j, x) in row {
            out[j] += coef * x;
        }
        out
    }

    fn batch_hvp_operator<'a>(
        &'a self,
        w: &Vector,
        indices: &'a [usize],
    ) -> Box<dyn Fn(&Vector) -> Vector + Send + Sync + 'a> {
        let weights: Vec<f64> = indices
            .iter()
            .map(|&i| {
                let p = sigmoid(sparse_dot(&self.rows[i], w.as_slice()));
                p * (1.0 - p)
            })
            .collect();
        let curvature = self.penalty_curvature(w);
        let scale = 1.0 / indices.len() as f64;
        Box::new(move |v: &Vector| {
            let mut acc = Vector::zeros(v.len());
            for (&i, &s) in indices.iter().zip(&weights) {
                let row = &self.rows[i];
                let coef = s * sparse_dot(row, v.as_slice());
                for &(j, x) in row {
                    acc[j] += coef * x;
                }
            }
            acc * scale + curvature.component_mul(v)
        })
    }
}

/// Penalty used by the multiclass objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MulticlassPenalty {
    /// `λ Σ w² / (1 + w²)`, matching the binary objective.
    #[default]
    Nonconvex,
    /// `λ Σ (1 + w²)`, a shifted convex quadratic. Opt-in only.
    ShiftedQuadratic,
}

/// Softmax regression over `m` classes. The weight matrix `W` (m × d) is
/// flattened row-major: entry `(k, j)` lives at `k·d + j`.
#[derive(Debug, Clone)]
pub struct MulticlassLogReg {
    rows: Vec<Row>,
    classes: Vec<usize>,
    num_classes: usize,
    features: usize,
    lambda: f64,
    penalty: MulticlassPenalty,
    constants: ProblemConstants,
}

impl MulticlassLogReg {
    pub fn new(dataset: &LibsvmDataset, lambda: f64, num_classes: usize) -> Result<Self> {
        Self::with_penalty(dataset, lambda, num_classes, MulticlassPenalty::Nonconvex)
    }

    pub fn with_penalty(
        dataset: &LibsvmDataset,
        lambda: f64,
        num_classes: usize,
        penalty: MulticlassPenalty,
    ) -> Result<Self> {
        let classes = dataset.class_labels(num_classes)?;
        Self::from_parts(
            zero_based_rows(dataset),
            classes,
            dataset.dim(),
            num_classes,
            lambda,
            penalty,
        )
    }

    pub fn from_parts(
        rows: Vec<Row>,
        classes: Vec<usize>,
        features: usize,
        num_classes: usize,
        lambda: f64,
        penalty: MulticlassPenalty,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        if rows.is_empty() || rows.len() != classes.len() {
            return Err(Error::InvalidArgument("need one class per nonempty row set".into()));
        }
        if features == 0 || num_classes < 2 {
            return Err(Error::InvalidArgument("need d ≥ 1 and m ≥ 2".into()));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= num_classes) {
            return Err(Error::LabelOutOfRange(format!("class {c} with m = {num_classes}")));
        }
        if rows.iter().flatten().any(|&(j, _)| j >= features) {
            return Err(Error::InvalidArgument("feature index exceeds dimension".into()));
        }
        let r = max_row_norm(&rows);
        let (pen_l, pen_rho) = match penalty {
            MulticlassPenalty::Nonconvex => (lambda * penalty::SECOND_BOUND, lambda * penalty::third_bound()),
            MulticlassPenalty::ShiftedQuadratic => (2.0 * lambda, 0.0),
        };
        // ‖diag(p) − ppᵀ‖ ≤ 1/2; third cumulant of a unit logit direction ≤ 2;
        // ‖p − y‖ ≤ √2
        let constants = ProblemConstants {
            lipschitz_grad: r * r / 2.0 + pen_l,
            lipschitz_hess: 2.0 * r.powi(3) + pen_rho,
            grad_bound: GradBound::Bounded(2.0 * 2f64.sqrt() * r),
        };
        Ok(Self {
            rows,
            classes,
            num_classes,
            features,
            lambda,
            penalty,
            constants,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_features(&self) -> usize {
        self.features
    }

    fn logits(&self, row: &[(usize, f64)], w: &[f64]) -> Vec<f64> {
        let d = self.features;
        (0..self.num_classes)
            .map(|k| sparse_dot(row, &w[k * d..(k + 1) * d]))
            .collect()
    }

    fn softmax(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&a| (a - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    fn penalty_value(&self, w: &Vector) -> f64 {
        match self.penalty {
            MulticlassPenalty::Nonconvex => self.lambda * w.iter().map(|&x| penalty::value(x)).sum::<f64>(),
            MulticlassPenalty::ShiftedQuadratic => self.lambda * w.iter().map(|&x| 1.0 + x * x).sum::<f64>(),
        }
    }

    fn penalty_gradient(&self, w: &Vector) -> Vector {
        match self.penalty {
            MulticlassPenalty::Nonconvex => w.map(|x| self.lambda * penalty::first(x)),
            MulticlassPenalty::ShiftedQuadratic => w * (2.0 * self.lambda),
        }
    }

    fn penalty_curvature(&self, w: &Vector) -> Vector {
        match self.penalty {
            MulticlassPenalty::Nonconvex => w.map(|x| self.lambda * penalty::second(x)),
            MulticlassPenalty::ShiftedQuadratic => Vector::from_element(w.len(), 2.0 * self.lambda),
        }
    }

    /// Adds `H_i(w) v` (data term only) for softmax probabilities `p`.
    fn add_data_hvp(&self, row: &[(usize, f64)], p: &[f64], v: &[f64], scale: f64, out: &mut Vector) {
        let d = self.features;
        let s: Vec<f64> = (0..self.num_classes)
            .map(|k| sparse_dot(row, &v[k * d..(k + 1) * d]))
            .collect();
        let ps: f64 = p.iter().zip(&s).map(|(a, b)| a * b).sum();
        for k in 0..self.num_classes {
            let u = scale * p[k] * (s[k] - ps);
            for &(j, x) in row {
                out[k * d + j] += u * x;
            }
        }
    }
}

impl FiniteSumProblem for MulticlassLogReg {
    fn num_components(&self) -> usize {
        self.rows.len()
    }

    fn dim(&self) -> usize {
        self.num_classes * self.features
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn has_explicit_hessian(&self) -> bool {
        self.dim() <= DENSE_HESSIAN_LIMIT
    }

    fn component_value(&self, i: usize, w: &Vector) -> f64 {
        let a = self.logits(&self.rows[i], w.as_slice());
        let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + a.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        lse - a[self.classes[i]] + self.penalty_value(w)
    }

    fn component_gradient(&self, i: usize, w: &Vector) -> Vector {
        let row = &self.rows[i];
        let p = Self::softmax(&self.logits(row, w.as_slice()));
        let d = self.features;
        let mut g = self.penalty_gradient(w);
        for (k, &pk) in p.iter().enumerate() {
            let r = pk - if k == self.classes[i] { 1.0 } else { 0.0 };
            for &(j, x) in row {
                g[k * d + j] += r * x;
            }
        }
        g
    }

    fn component_hessian(&self, i: usize, w: &Vector) -> Result<Matrix> {
        if !self.has_explicit_hessian() {
            return Err(Error::HessianUnavailable(format!(
                "m·d = {} exceeds dense limit {DENSE_HESSIAN_LIMIT}",
                self.dim()
            )));
        }
        let row = &self.rows[i];
        let p = Self::softmax(&self.logits(row, w.as_slice()));
        let d = self.features;
        let mut h = Matrix::from_diagonal(&self.penalty_curvature(w));
        for k in 0..self.num_classes {
            for l in 0..self.num_classes {
                let c = if k == l { p[k] - p[k] * p[l] } else { -(p[k] * p[l]) };
                for &(ja, xa) in row {
                    for &(jb, xb) in row {
                        h[(k * d + ja, l * d + jb)] += c * (xa * xb);
                    }
                }
            }
        }
        Ok(h)
    }

    fn component_hvp(&self, i: usize, w: &Vector, v: &Vector) -> Vector {
        let row = &self.rows[i];
        let p = Self::softmax(&self.logits(row, w.as_slice()));
        let mut out = self.penalty_curvature(w).component_mul(v);
        self.add_data_hvp(row, &p, v.as_slice(), 1.0, &mut out);
        out
    }

    fn batch_hvp_operator<'a>(
        &'a self,
        w: &Vector,
        indices: &'a [usize],
    ) -> Box<dyn Fn(&Vector) -> Vector + Send + Sync + 'a> {
        let probs: Vec<Vec<f64>> = indices
            .iter()
            .map(|&i| Self::softmax(&self.logits(&self.rows[i], w.as_slice())))
            .collect();
        let curvature = self.penalty_curvature(w);
        let scale = 1.0 / indices.len() as f64;
        Box::new(move |v: &Vector| {
            let mut acc = Vector::zeros(v.len());
            for (&i, p) in indices.iter().zip(&probs) {
                self.add_data_hvp(&self.rows[i], p, v.as_slice(), 1.0, &mut acc);
            }
            acc * scale + curvature.component_mul(v)
        })
    }
}
