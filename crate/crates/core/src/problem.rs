//! Finite-sum problem abstraction and batched oracle evaluation.
//!
//! An objective `F(x) = (1/n) Σ f_i(x)` is exposed through per-component
//! oracles. Batched evaluation averages over an index multiset; a batch whose
//! size reaches `n` is replaced by the full index set, so every batch formula
//! is implicitly capped at `n`. Reductions always run in ascending index order,
//! which keeps seeded runs bit-reproducible.
//!
//! Component indices are zero-based.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Bound `M` on `‖∇f_i(x) − ∇F(x)‖₂`, or its absence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradBound {
    Bounded(f64),
    Unbounded,
}

impl GradBound {
    pub fn value(&self) -> f64 {
        match self {
            GradBound::Bounded(m) => *m,
            GradBound::Unbounded => f64::INFINITY,
        }
    }
}

/// User-supplied smoothness metadata; never estimated from data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Gradient Lipschitz constant `L` of every component.
    pub lipschitz_grad: f64,
    /// Hessian Lipschitz constant `ρ` of every component.
    pub lipschitz_hess: f64,
    /// Stochastic gradient deviation bound `M`.
    pub grad_bound: GradBound,
}

/// A finite-sum objective `F = (1/n) Σ_i f_i`.
pub trait FiniteSumProblem: Sync {
    fn num_components(&self) -> usize;

    fn dim(&self) -> usize;

    fn constants(&self) -> ProblemConstants;

    fn component_value(&self, i: usize, x: &Vector) -> f64;

    fn component_gradient(&self, i: usize, x: &Vector) -> Vector;

    /// Dense Hessian of component `i`. Problems too large for dense storage
    /// return [`Error::HessianUnavailable`].
    fn component_hessian(&self, i: usize, x: &Vector) -> Result<Matrix>;

    fn component_hvp(&self, i: usize, x: &Vector, v: &Vector) -> Vector;

    fn has_explicit_hessian(&self) -> bool {
        true
    }

    /// Averaged Hessian-vector product over `indices` at the fixed point `x`,
    /// returned as a reusable operator. Implementations may precompute
    /// anything that depends only on `(x, indices)`; the result must equal the
    /// ascending-order average of [`FiniteSumProblem::component_hvp`].
    fn batch_hvp_operator<'a>(
        &'a self,
        x: &Vector,
        indices: &'a [usize],
    ) -> Box<dyn Fn(&Vector) -> Vector + Send + Sync + 'a> {
        let x = x.clone();
        Box::new(move |v: &Vector| {
            let mut acc = Vector::zeros(v.len());
            for &i in indices {
                acc += self.component_hvp(i, &x, v);
            }
            acc / indices.len() as f64
        })
    }
}

/// Counts of individual component oracle evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounter {
    pub grad_calls: u64,
    pub hess_calls: u64,
    pub hvp_calls: u64,
}

impl OracleCounter {
    pub fn new() -> Self {
        Self::default()
    }
}

impl std::ops::Add for OracleCounter {
    type Output = OracleCounter;

    fn add(self, rhs: OracleCounter) -> OracleCounter {
        OracleCounter {
            grad_calls: self.grad_calls + rhs.grad_calls,
            hess_calls: self.hess_calls + rhs.hess_calls,
            hvp_calls: self.hvp_calls + rhs.hvp_calls,
        }
    }
}

/// An index multiset, sorted ascending. `full` marks the exact full set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexBatch {
    indices: Vec<usize>,
    full: bool,
}

impl IndexBatch {
    pub fn full(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            full: true,
        }
    }

    /// Builds a batch from explicit indices. Indices are sorted so that
    /// reductions run in ascending order.
    pub fn from_indices(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty index batch".into()));
        }
        indices.sort_unstable();
        Ok(Self { indices, full: false })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    fn validate(&self, n: usize) -> Result<()> {
        if let Some(&last) = self.indices.last() {
            if last >= n {
                return Err(Error::IndexOutOfRange { index: last, n });
            }
        }
        Ok(())
    }
}

/// Draws `size` indices uniformly with replacement from `0..n`.
///
/// When `size >= n` the full index set is returned and no randomness is
/// consumed.
pub fn sample_multiset<R: Rng + ?Sized>(rng: &mut R, n: usize, size: usize) -> Result<IndexBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if size >= n {
        return Ok(IndexBatch::full(n));
    }
    let indices = (0..size).map(|_| rng.random_range(0..n)).collect();
    IndexBatch::from_indices(indices)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn batch_gradient<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &Vector,
    batch: &IndexBatch,
    counter: &mut OracleCounter,
) -> Result<Vector> {
    check_dim(problem.dim(), x.len())?;
    batch.validate(problem.num_components())?;
    let mut acc = Vector::zeros(x.len());
    for &i in batch.indices() {
        acc += problem.component_gradient(i, x);
    }
    counter.grad_calls += batch.len() as u64;
    Ok(acc / batch.len() as f64)
}

pub fn batch_hessian<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &Vector,
    batch: &IndexBatch,
    counter: &mut OracleCounter,
) -> Result<Matrix> {
    check_dim(problem.dim(), x.len())?;
    batch.validate(problem.num_components())?;
    let d = x.len();
    let mut acc = Matrix::zeros(d, d);
    for &i in batch.indices() {
        acc += problem.component_hessian(i, x)?;
    }
    counter.hess_calls += batch.len() as u64;
    Ok(acc / batch.len() as f64)
}

pub fn batch_hvp<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &Vector,
    batch: &IndexBatch,
    v: &Vector,
    counter: &mut OracleCounter,
) -> Result<Vector> {
    check_dim(problem.dim(), x.len())?;
    check_dim(problem.dim(), v.len())?;
    batch.validate(problem.num_components())?;
    let mut acc = Vector::zeros(x.len());
    for &i in batch.indices() {
        acc += problem.component_hvp(i, x, v);
    }
    counter.hvp_calls += batch.len() as u64;
    Ok(acc / batch.len() as f64)
}

/// `F(x)`. Used for diagnostics; not charged to any counter.
pub fn full_value<P: FiniteSumProblem + ?Sized>(problem: &P, x: &Vector) -> f64 {
    let n = problem.num_components();
    let sum: f64 = (0..n).map(|i| problem.component_value(i, x)).sum();
    sum / n as f64
}

/// `∇F(x)`, not charged to any counter.
pub fn full_gradient<P: FiniteSumProblem + ?Sized>(problem: &P, x: &Vector) -> Result<Vector> {
    let mut scratch = OracleCounter::new();
    batch_gradient(problem, x, &IndexBatch::full(problem.num_components()), &mut scratch)
}

/// `∇²F(x)`, not charged to any counter.
pub fn full_hessian<P: FiniteSumProblem + ?Sized>(problem: &P, x: &Vector) -> Result<Matrix> {
    let mut scratch = OracleCounter::new();
    batch_hessian(problem, x, &IndexBatch::full(problem.num_components()), &mut scratch)
}

/// Largest absolute asymmetry `max |H_ij − H_ji|`.
pub fn asymmetry(h: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..h.nrows() {
        for j in (i + 1)..h.ncols() {
            worst = worst.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `f_i(x) = ½ a_i ‖x‖²`.
    struct ScaledNorm {
        a: Vec<f64>,
        d: usize,
    }

    impl FiniteSumProblem for ScaledNorm {
        fn num_components(&self) -> usize {
            self.a.len()
        }
        fn dim(&self) -> usize {
            self.d
        }
        fn constants(&self) -> ProblemConstants {
            ProblemConstants {
                lipschitz_grad: self.a.iter().cloned().fold(0.0, f64::max),
                lipschitz_hess: 1.0,
                grad_bound: GradBound::Unbounded,
            }
        }
        fn component_value(&self, i: usize, x: &Vector) -> f64 {
            0.5 * self.a[i] * x.norm_squared()
        }
        fn component_gradient(&self, i: usize, x: &Vector) -> Vector {
            x * self.a[i]
        }
        fn component_hessian(&self, i: usize, _x: &Vector) -> Result<Matrix> {
            Ok(Matrix::identity(self.d, self.d) * self.a[i])
        }
        fn component_hvp(&self, i: usize, _x: &Vector, v: &Vector) -> Vector {
            v * self.a[i]
        }
    }

    fn problem() -> ScaledNorm {
        ScaledNorm {
            a: vec![1.0, 3.0, -2.0, 0.5],
            d: 3,
        }
    }

    #[test]
    fn full_batch_short_circuit() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let before = rng.clone();
        let b = sample_multiset(&mut rng, 5, 5).unwrap();
        assert!(b.is_full());
        assert_eq!(b.indices(), &[0, 1, 2, 3, 4]);
        let b = sample_multiset(&mut rng, 5, 7).unwrap();
        assert_eq!(b.indices(), &[0, 1, 2, 3, 4]);
        // no randomness consumed
        assert_eq!(rng, before);
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            sample_multiset(&mut rng, 100, 10).unwrap()
        };
        let a = draw();
        assert_eq!(a.len(), 10);
        assert!(!a.is_full());
        assert!(a.indices().iter().all(|&i| i < 100));
        assert_eq!(a, draw());
    }

    #[test]
    fn sampling_rejects_degenerate_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_multiset(&mut rng, 0, 3),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            sample_multiset(&mut rng, 3, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn singleton_and_pair_gradients() {
        let p = problem();
        let x = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut c = OracleCounter::new();
        let g = batch_gradient(&p, &x, &IndexBatch::from_indices(vec![1]).unwrap(), &mut c).unwrap();
        assert_eq!(g, &x * 3.0);
        let g = batch_gradient(&p, &x, &IndexBatch::from_indices(vec![0, 1]).unwrap(), &mut c).unwrap();
        assert!((g - &x * 2.0).norm() < 1e-15);
        assert_eq!(c.grad_calls, 3);
    }

    #[test]
    fn full_set_counts_n() {
        let p = problem();
        let x = Vector::from_element(3, 1.0);
        let mut c = OracleCounter::new();
        let h = batch_hessian(&p, &x, &IndexBatch::full(4), &mut c).unwrap();
        assert!((h - Matrix::identity(3, 3) * 0.625).norm() < 1e-15);
        assert_eq!(c.hess_calls, 4);
        batch_hvp(&p, &x, &IndexBatch::full(4), &x, &mut c).unwrap();
        assert_eq!(c.hvp_calls, 4);
    }

    #[test]
    fn hvp_edge_cases() {
        let p = ScaledNorm {
            a: vec![1.0, 1.0],
            d: 4,
        };
        let x = Vector::from_element(4, 2.0);
        let v = Vector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let mut c = OracleCounter::new();
        let full = IndexBatch::full(2);
        assert_eq!(
            batch_hvp(&p, &x, &full, &Vector::zeros(4), &mut c).unwrap(),
            Vector::zeros(4)
        );
        assert_eq!(batch_hvp(&p, &x, &full, &v, &mut c).unwrap(), v);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let p = problem();
        let x = Vector::zeros(3);
        let mut c = OracleCounter::new();
        let bad = IndexBatch::from_indices(vec![0, 4]).unwrap();
        assert!(matches!(
            batch_gradient(&p, &x, &bad, &mut c),
            Err(Error::IndexOutOfRange { index: 4, n: 4 })
        ));
        assert_eq!(c, OracleCounter::default());
    }

    #[test]
    fn default_hvp_operator_matches_batch_hvp() {
        let p = problem();
        let x = Vector::from_element(3, 1.0);
        let v = Vector::from_vec(vec![0.3, -1.0, 2.0]);
        let idx = vec![0, 2, 2, 3];
        let op = p.batch_hvp_operator(&x, &idx);
        let mut c = OracleCounter::new();
        let want = batch_hvp(&p, &x, &IndexBatch::from_indices(idx.clone()).unwrap(), &v, &mut c).unwrap();
        assert!((op(&v) - want).norm() < 1e-15);
    }
}
