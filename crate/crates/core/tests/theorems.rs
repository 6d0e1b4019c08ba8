mod common;

use common::*;
use nalgebra::{dmatrix, DMatrix};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roptd::config::ProblemConfig;
use roptd::model::{CovarianceSpec, DesignMeasure};
use roptd::problem::{build_context, solve_problem, RunOptions, Solution};
use roptd::symmetry::{
    correlation_sign_equivalent, detect_q, phi_invariance_gap, swap_permutation, Transform,
};

fn solve_with(cfg: &ProblemConfig, f: impl FnOnce(&mut RunOptions)) -> Solution {
    let mut run = RunOptions::from_config(cfg);
    f(&mut run);
    let sol = solve_problem(cfg, &run).unwrap();
    assert!(sol.converged(), "max_d {}", sol.equivalence.max_d);
    sol
}

fn with_r0(cfg: &ProblemConfig, r0: DMatrix<f64>) -> ProblemConfig {
    let mut c = cfg.clone();
    c.covariance = CovarianceSpec::from_correlation(r0).unwrap();
    c
}

#[test]
fn scaled_space_gives_the_same_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for name in ["example1_sn1", "example1"] {
        let cfg = bundled(name);
        let base = solve_default(&cfg);
        for _ in 0..2 {
            let t: Vec<f64> = (0..2).map(|_| rng.random_range(0.2..5.0)).collect();
            let q = detect_q(&cfg.model, &cfg.space, &Transform::Scale { factors: t.clone() }).unwrap();
            assert_eq!(q.len(), 15);
            let mut scaled = cfg.clone();
            scaled.space = cfg.space.scaled(&t).unwrap();
            let sol = solve_default(&scaled);
            assert!(sol.converged());
            let d = max_abs_diff(base.weights.weights(), sol.weights.weights());
            assert!(d < 1e-6, "{name} scales {t:?}: {d:e}");
        }
    }
}

#[test]
fn reduced_and_full_solves_agree_example1() {
    let cfg = bundled("example1");
    let full = solve_with(&cfg, |r| r.axes.clear());
    let red = solve_with(&cfg, |r| r.axes = vec![0, 1]);
    assert_eq!(red.reduction.as_ref().unwrap().len(), 64);
    let d = max_abs_diff(full.weights.weights(), red.weights.weights());
    assert!(d < 1e-6, "{d:e}");
    assert!((full.loss - red.loss).abs() < 1e-9);
}

#[test]
fn reduced_and_full_solves_agree_example2() {
    let cfg = bundled("example2");
    let full = solve_with(&cfg, |r| r.axes.clear());
    let red = solve_with(&cfg, |r| r.axes = vec![0, 1, 2]);
    assert_eq!(red.reduction.as_ref().unwrap().len(), 864 / 8);
    let d = max_abs_diff(full.weights.weights(), red.weights.weights());
    assert!(d < 1e-6, "{d:e}");
    assert!((full.loss - red.loss).abs() < 1e-9);
    assert_eq!(full.support.len(), 32);
}

#[test]
fn identical_bases_do_not_depend_on_covariance() {
    let single = solve_default(&quadratic_config(1, &dmatrix![1.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for m in [2, 3] {
        let l = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let v0 = &l * l.transpose() + DMatrix::identity(m, m) * 0.1;
        for use_correlation in [true, false] {
            let cfg = quadratic_config(m, &v0);
            let sol = solve_with(&cfg, |r| r.use_correlation = use_correlation);
            let d = max_abs_diff(single.weights.weights(), sol.weights.weights());
            assert!(d < 1e-6, "m={m}: {d:e}");
        }
    }
    // Known single-response optimum: 3 support points at -1, 0, 1.
    assert_eq!(single.support.len(), 3);
}

#[test]
fn covariance_and_correlation_give_identical_weights() {
    for name in ["example1_v02", "example3"] {
        let cfg = bundled(name);
        let a = solve_with(&cfg, |r| r.use_correlation = true);
        let b = solve_with(&cfg, |r| r.use_correlation = false);
        let d = max_abs_diff(a.weights.weights(), b.weights.weights());
        assert!(d < 1e-8, "{name}: {d:e}");
    }
}

#[test]
fn correlation_sign_flip_gives_identical_weights() {
    let cfg = bundled("example3");
    let flipped = with_r0(&cfg, dmatrix![1.0, -0.5; -0.5, 1.0]);
    assert_eq!(
        correlation_sign_equivalent(cfg.covariance.r0(), flipped.covariance.r0()),
        Some(vec![1.0, -1.0])
    );
    let a = solve_default(&cfg);
    let b = solve_default(&flipped);
    assert!(a.converged() && b.converged());
    let d = max_abs_diff(a.weights.weights(), b.weights.weights());
    assert!(d < 1e-8, "{d:e}");

    let cfg = bundled("example1_sn1");
    let s = dmatrix![1.0, 0.0, 0.0; 0.0, -1.0, 0.0; 0.0, 0.0, 1.0];
    let r1 = &s * cfg.covariance.r0() * &s;
    assert_eq!(
        correlation_sign_equivalent(cfg.covariance.r0(), &r1),
        Some(vec![1.0, -1.0, 1.0])
    );
    let flipped = with_r0(&cfg, r1);
    let a = solve_default(&cfg);
    let b = solve_default(&flipped);
    assert!(a.converged() && b.converged());
    let d = max_abs_diff(a.weights.weights(), b.weights.weights());
    assert!(d < 1e-8, "{d:e}");
}

#[test]
fn square_space_has_line_symmetry() {
    let cfg = bundled("example1_sn1");
    let ctx = build_context(&cfg, true, 1).unwrap();
    let perm = swap_permutation(&cfg.space, 0, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<DesignMeasure> = (0..10)
        .map(|_| DesignMeasure::new(random_interior(&mut rng, ctx.len())).unwrap())
        .collect();
    let gap = phi_invariance_gap(&ctx, &perm, &samples).unwrap();
    assert!(gap < 1e-10, "{gap:e}");
    // The solution itself is symmetric in the line x1 = x2.
    let sol = solve_default(&cfg);
    let w = sol.weights.weights();
    for (j, &k) in perm.iter().enumerate() {
        assert!((w[j] - w[k]).abs() < 1e-6);
    }
    // The rectangle of the second space is not symmetric under a swap.
    assert!(swap_permutation(&bundled("example1").space, 0, 1).is_err());
}
