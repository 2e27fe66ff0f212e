mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use srvrc::estimators::{
    default_epochs, theoretical_batch_g, theoretical_batch_h, EstimatorState, ScheduleVariant, TheoreticalSchedule,
};
use srvrc::objectives::{SyntheticProblem, SyntheticSpec};
use srvrc::problem::{full_gradient, full_hessian};
use srvrc::{GradBound, Matrix, OracleCounter, Vector};

fn schedule(variant: ScheduleVariant, n: usize) -> TheoreticalSchedule {
    TheoreticalSchedule {
        variant,
        n,
        dim: 10,
        eps: 0.1,
        xi: 0.1,
        budget: 100,
        lipschitz_grad: 1.0,
        lipschitz_hess: 1.0,
        grad_bound: GradBound::Bounded(1.0),
        grad_epoch: 4,
        hess_epoch: 4,
    }
}

#[test]
fn reset_gradient_batch_formula() {
    // 1440·ln²(2000)/0.01 = 8319415.42…
    let r = schedule(ScheduleVariant::Srvrc, 100_000_000);
    assert_eq!(theoretical_batch_g(&r, 0, None).unwrap(), 8_319_416);
    let capped = schedule(ScheduleVariant::Srvrc, 1_000_000);
    assert_eq!(theoretical_batch_g(&capped, 0, None).unwrap(), 1_000_000);
    // 2640·ln²(3000)/0.01 = 16922907.31…
    let free = schedule(ScheduleVariant::HessianFree, 100_000_000);
    assert_eq!(theoretical_batch_g(&free, 0, None).unwrap(), 16_922_908);
}

#[test]
fn reset_hessian_batch_formula() {
    // 800·ln²(20000)/0.01 = 7846325.26…
    let r = TheoreticalSchedule {
        eps: 0.01,
        ..schedule(ScheduleVariant::Srvrc, 1_000_000_000)
    };
    assert_eq!(theoretical_batch_h(&r, 0, None).unwrap(), 7_846_326);
    let capped = TheoreticalSchedule { n: 1_000_000, ..r };
    assert_eq!(theoretical_batch_h(&capped, 0, None).unwrap(), 1_000_000);
    // 1200·ln²(30000)/0.01 = 12752940.60…, at every step
    let free = TheoreticalSchedule {
        variant: ScheduleVariant::HessianFree,
        ..r
    };
    assert_eq!(theoretical_batch_h(&free, 0, None).unwrap(), 12_752_941);
    assert_eq!(theoretical_batch_h(&free, 3, None).unwrap(), 12_752_941);
}

#[test]
fn non_reset_gradient_batch_formula() {
    // 1440·1·4·0.01²·ln²(2000)/0.01 = 3327.77…
    let r = schedule(ScheduleVariant::Srvrc, 1_000_000);
    assert_eq!(theoretical_batch_g(&r, 1, Some(0.01)).unwrap(), 3328);
}

#[test]
fn non_reset_batches_grow_with_step_norm() {
    let r = schedule(ScheduleVariant::Srvrc, 1_000_000);
    let mut last = (0, 0);
    for k in 0..40 {
        let h = 1e-4 * 1.3f64.powi(k);
        let now = (
            theoretical_batch_g(&r, 1, Some(h)).unwrap(),
            theoretical_batch_h(&r, 1, Some(h)).unwrap(),
        );
        assert!(now.0 >= last.0 && now.1 >= last.1);
        assert!(now.0 >= 1 && now.0 <= r.n && now.1 >= 1 && now.1 <= r.n);
        last = now;
    }
    assert_eq!(last, (r.n, r.n));
}

#[test]
fn epoch_defaults() {
    // n ∧ L/(ρε) = 16
    assert_eq!(default_epochs(16, 0.01, 1.0, 1.0, GradBound::Bounded(1.0)).1, 4);
    // √(ρε)/L · √n = 0.1/0.5 · 20
    assert_eq!(default_epochs(400, 0.01, 0.5, 1.0, GradBound::Unbounded).0, 4);
    assert_eq!(default_epochs(1_000_000, 1.0, 1.0, 4.0, GradBound::Bounded(1.0)).1, 1);
}

fn synthetic(n: usize, d: usize) -> SyntheticProblem {
    SyntheticProblem::generate(&SyntheticSpec {
        seed: 31,
        n,
        d,
        nonconvexity: 1.0,
    })
    .unwrap()
}

#[test]
fn full_batches_track_the_true_derivatives() {
    let p = synthetic(30, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut state = EstimatorState::new(7, 7).unwrap();
    let mut counter = OracleCounter::new();
    let mut x_prev: Option<Vector> = None;
    let mut x = Vector::from_element(4, 1.5);
    for t in 0..20 {
        let v = state
            .update_gradient(&p, &x, x_prev.as_ref(), 30, &mut rng, &mut counter)
            .unwrap()
            .clone();
        let u = state
            .update_hessian(&p, &x, x_prev.as_ref(), 30, &mut rng, &mut counter)
            .unwrap()
            .clone();
        let g = full_gradient(&p, &x).unwrap();
        let h = full_hessian(&p, &x).unwrap();
        assert!((&v - &g).norm() <= 1e-10 * (1.0 + g.norm()), "t = {t}");
        assert!((&u - &h).norm() <= 1e-10 * (1.0 + h.norm()), "t = {t}");
        let step = common::random_vector(&mut rng, 4) * 0.3;
        state.advance(step.norm());
        x_prev = Some(x.clone());
        x += step;
    }
}

#[test]
fn zero_displacement_keeps_the_estimate() {
    let p = synthetic(30, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut state = EstimatorState::new(5, 5).unwrap();
    let mut counter = OracleCounter::new();
    let x = Vector::from_element(4, 0.3);
    let v0 = state
        .update_gradient(&p, &x, None, 3, &mut rng, &mut counter)
        .unwrap()
        .clone();
    let u0 = state
        .update_hessian(&p, &x, None, 3, &mut rng, &mut counter)
        .unwrap()
        .clone();
    state.advance(0.0);
    let v1 = state
        .update_gradient(&p, &x, Some(&x), 2, &mut rng, &mut counter)
        .unwrap()
        .clone();
    let u1 = state
        .update_hessian(&p, &x, Some(&x), 2, &mut rng, &mut counter)
        .unwrap()
        .clone();
    assert_eq!(v0, v1);
    assert_eq!(u0, u1);
}

#[test]
fn constant_hessians_freeze_the_reset_average() {
    // α = 0 leaves only quadratics, so Hessian differences vanish
    let p = SyntheticProblem::generate(&SyntheticSpec {
        seed: 3,
        n: 20,
        d: 3,
        nonconvexity: 0.0,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut state = EstimatorState::new(1, 50).unwrap();
    let mut counter = OracleCounter::new();
    let mut x = Vector::zeros(3);
    let mut x_prev: Option<Vector> = None;
    let mut first: Option<Matrix> = None;
    for _ in 0..10 {
        let u = state
            .update_hessian(&p, &x, x_prev.as_ref(), 4, &mut rng, &mut counter)
            .unwrap()
            .clone();
        match &first {
            None => first = Some(u),
            Some(f) => assert!((&u - f).amax() <= 1e-14),
        }
        state.advance(1.0);
        x_prev = Some(x.clone());
        x += common::random_vector(&mut rng, 3);
    }
}

#[test]
fn hand_checked_recursive_hessian_step() {
    // f_0 has Hessian diag(2, 0) + α r''(x) I-diagonal, f_1 the same with diag(0, 4)
    let a0 = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 0.0]));
    let a1 = Matrix::from_diagonal(&Vector::from_vec(vec![0.0, 4.0]));
    let p = SyntheticProblem::from_parts(vec![a0, a1], vec![Vector::zeros(2), Vector::zeros(2)], 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut state = EstimatorState::new(2, 2).unwrap();
    let mut counter = OracleCounter::new();
    let x0 = Vector::zeros(2);
    let x1 = Vector::from_vec(vec![1.0, 0.0]);
    // full reset: mean of diag(2,0), diag(0,4) plus r''(0) = 2 on both coordinates
    let u0 = state
        .update_hessian(&p, &x0, None, 2, &mut rng, &mut counter)
        .unwrap()
        .clone();
    assert_eq!(u0, Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 4.0])));
    state.advance(1.0);
    let u1 = state
        .update_hessian(&p, &x1, Some(&x0), 2, &mut rng, &mut counter)
        .unwrap()
        .clone();
    // r''(1) = (2 − 6)/8 = −0.5, so the first diagonal entry drops by 2.5
    assert!((u1[(0, 0)] - 0.5).abs() < 1e-15);
    assert_eq!(u1[(1, 1)], 4.0);
    assert_eq!(counter.hess_calls, 2 + 4);
}

#[test]
fn charges_double_between_resets() {
    let p = synthetic(50, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut state = EstimatorState::new(3, 3).unwrap();
    let mut counter = OracleCounter::new();
    let mut x = Vector::zeros(3);
    let mut x_prev: Option<Vector> = None;
    let mut expected = 0;
    for t in 0..9 {
        state
            .update_gradient(&p, &x, x_prev.as_ref(), 8, &mut rng, &mut counter)
            .unwrap();
        expected += if t % 3 == 0 { 8 } else { 16 };
        assert_eq!(counter.grad_calls, expected);
        state.advance(0.1);
        x_prev = Some(x.clone());
        x[0] += 0.1;
    }
}

/// Per-coordinate z-scores of the mean of `reps` draws against `target`.
fn max_z(samples: &[Vector], target: &Vector) -> f64 {
    let n = samples.len() as f64;
    let d = target.len();
    let mean = samples.iter().fold(Vector::zeros(d), |acc, s| acc + s) / n;
    let var = samples
        .iter()
        .fold(Vector::zeros(d), |acc, s| acc + (s - &mean).map(|e| e * e))
        / (n - 1.0);
    (0..d)
        .map(|j| (mean[j] - target[j]).abs() / (var[j] / n).sqrt().max(1e-300))
        .fold(0.0, f64::max)
}

#[test]
fn subsampled_estimators_are_unbiased() {
    let p = synthetic(40, 3);
    let x0 = Vector::from_vec(vec![0.5, -0.2, 0.1]);
    let x1 = Vector::from_vec(vec![0.7, -0.4, 0.3]);
    let g1 = full_gradient(&p, &x1).unwrap();
    let reps = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut reset_draws = Vec::with_capacity(reps);
    let mut recursive_draws = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut counter = OracleCounter::new();
        let mut state = EstimatorState::new(10, 10).unwrap();
        // exact reset, then a subsampled recursive step
        state
            .update_gradient(&p, &x0, None, 40, &mut rng, &mut counter)
            .unwrap();
        state.advance((&x1 - &x0).norm());
        recursive_draws.push(
            state
                .update_gradient(&p, &x1, Some(&x0), 3, &mut rng, &mut counter)
                .unwrap()
                .clone(),
        );
        let mut fresh = EstimatorState::new(10, 10).unwrap();
        reset_draws.push(
            fresh
                .update_gradient(&p, &x1, None, 3, &mut rng, &mut counter)
                .unwrap()
                .clone(),
        );
    }
    // 4.5σ per coordinate keeps the family-wise false alarm rate below 1e-4
    assert!(max_z(&reset_draws, &g1) < 4.5);
    assert!(max_z(&recursive_draws, &g1) < 4.5);
}
