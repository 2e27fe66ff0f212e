//! Concrete finite-sum objectives: nonconvex-penalized logistic regression
//! (binary and multiclass) over libsvm data, and a seeded synthetic family.

pub mod libsvm;
pub mod logreg;
pub mod synthetic;

pub use libsvm::{parse_libsvm, read_libsvm_file, LibsvmDataset, SparseRow};
pub use logreg::{BinaryLogReg, MulticlassLogReg, MulticlassPenalty};
pub use synthetic::{SyntheticProblem, SyntheticSpec};

/// The bounded nonconvex penalty `r(w) = w² / (1 + w²)` and its derivatives.
pub mod penalty {
    pub fn value(w: f64) -> f64 {
        let w2 = w * w;
        w2 / (1.0 + w2)
    }

    pub fn first(w: f64) -> f64 {
        let s = 1.0 + w * w;
        2.0 * w / (s * s)
    }

    pub fn second(w: f64) -> f64 {
        let s = 1.0 + w * w;
        (2.0 - 6.0 * w * w) / (s * s * s)
    }

    pub fn third(w: f64) -> f64 {
        let s = 1.0 + w * w;
        24.0 * w * (w * w - 1.0) / (s * s * s * s)
    }

    /// `sup |r''|`, attained at `w = 0`.
    pub const SECOND_BOUND: f64 = 2.0;

    /// `sup |r'''|`, attained at `w = ±tan(π/10)`.
    pub fn third_bound() -> f64 {
        third((std::f64::consts::PI / 10.0).tan()).abs()
    }

    #[cfg(test)]
    mod tests {
        use super::*;

        #[test]
        fn derivatives_match_finite_differences() {
            let h = 1e-6;
            for &w in &[-2.3, -0.7, 0.0, 0.2, 1.0, 3.5] {
                let fd1 = (value(w + h) - value(w - h)) / (2.0 * h);
                let fd2 = (first(w + h) - first(w - h)) / (2.0 * h);
                let fd3 = (second(w + h) - second(w - h)) / (2.0 * h);
                assert!((fd1 - first(w)).abs() < 1e-8);
                assert!((fd2 - second(w)).abs() < 1e-8);
                assert!((fd3 - third(w)).abs() < 1e-7);
            }
        }

        #[test]
        fn bounds_dominate_a_grid() {
            let c3 = third_bound();
            for k in -20000..=20000 {
                let w = k as f64 * 5e-4;
                assert!(second(w).abs() <= SECOND_BOUND + 1e-15);
                assert!(third(w).abs() <= c3 + 1e-12);
            }
            assert!((c3 - 4.668559284151318).abs() < 1e-9);
        }
    }
}
