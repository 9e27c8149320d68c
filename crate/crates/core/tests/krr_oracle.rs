mod common;

use common::{krr_oracle_errors, rel_frob, ridge_gd, ridge_objective};
use t2g_core::distill::krr_solve;
use t2g_core::{Mat, Rng64};

#[test]
fn closed_form_matches_gradient_descent() {
    let errors = krr_oracle_errors(50, 2024);
    let worst = errors.iter().copied().fold(0.0, f64::max);
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn twelve_by_four_example() {
    let mut rng = Rng64::new(12);
    let z = Mat::from_fn(12, 4, |_, _| rng.normal());
    let y = Mat::from_fn(12, 2, |_, _| rng.normal());
    let w = krr_solve(&z, &y, 1e-2).unwrap();
    assert!(rel_frob(&w, &ridge_gd(&z, &y, 1e-2, 10_000)) < 1e-4);
}

#[test]
fn gradient_descent_oracle_descends() {
    let mut rng = Rng64::new(3);
    let z = Mat::from_fn(5, 3, |_, _| rng.normal());
    let y = Mat::from_fn(5, 1, |_, _| rng.normal());
    let zero = Mat::zeros(3, 1);
    let w = ridge_gd(&z, &y, 0.5, 200);
    assert!(ridge_objective(&z, &y, &w, 0.5) < ridge_objective(&z, &y, &zero, 0.5));
}

#[test]
fn wide_problem_uses_row_space() {
    let mut rng = Rng64::new(4);
    let z = Mat::from_fn(2, 8, |_, _| rng.normal());
    let y = Mat::from_fn(2, 3, |_, _| rng.normal());
    let w = krr_solve(&z, &y, 1.0).unwrap();
    // primal normal equations (ZᵀZ + λI) W = Zᵀ Y
    let mut lhs = z.t_matmul(&z).unwrap();
    for i in 0..8 {
        lhs.set(i, i, lhs.get(i, i) + 1.0);
    }
    let resid = lhs.matmul(&w).unwrap().sub(&z.t_matmul(&y).unwrap()).unwrap();
    assert!(resid.max_abs() < 1e-10);
}
