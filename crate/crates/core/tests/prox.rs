use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use protodiff_core::model::{build_problem, Constraint, ConstraintSet, ParamFunction, ParamOperator, ScalarPath, VectorPath};
use protodiff_core::prox::{moreau_prox, project_onto_constraints, solve_vi, weighted_abs_prox, SolverParams};

fn halfspace() -> ParamFunction {
    ParamFunction::ConstraintIndicator(ConstraintSet::new(
        2,
        vec![Constraint::quadratic(None, DVector::from_vec(vec![1.0, 1.0]), None, [-1.0, 0.0, 0.0])],
    ))
}

fn disk_cap() -> ConstraintSet {
    let p = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
    ConstraintSet::new(
        2,
        vec![
            Constraint::quadratic(Some(p), DVector::from_vec(vec![0.0, 1.0]), None, [-1.0, 0.0, 0.0]),
            Constraint::quadratic(None, DVector::from_vec(vec![-1.0, 0.0]), None, [-2.0, 0.0, 0.0]),
        ],
    )
}

fn generalized_prox(x: &DVector<f64>) -> DVector<f64> {
    let a = ParamOperator::affine(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 2.0]), None, None, None, 1.0);
    let p = build_problem(a, halfspace(), VectorPath::constant(x.clone())).unwrap();
    solve_vi(&p, 0.0, &SolverParams::default().with_tol(1e-12), None).unwrap().point()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weighted_abs_prox_is_nonexpansive(
        x1 in -5.0..5.0f64, x2 in -5.0..5.0f64, rho in 0.05..3.0f64, t in 0.0..1.0f64, b in -2.0..2.0f64,
    ) {
        let f = ParamFunction::weighted_abs(ScalarPath::polynomial(&[1.0, 0.5]), ScalarPath::polynomial(&[b, 1.0]));
        let ParamFunction::WeightedAbs(w) = &f else { unreachable!() };
        let (p1, p2) = (weighted_abs_prox(w, t, x1, rho), weighted_abs_prox(w, t, x2, rho));
        prop_assert!((p1 - p2).abs() <= (x1 - x2).abs() + 1e-12);
        let via_enum = moreau_prox(&f, t, &DVector::from_element(1, x1), rho).unwrap();
        prop_assert!((via_enum[0] - p1).abs() < 1e-12);
    }

    #[test]
    fn solution_map_is_lipschitz_with_inverse_monotonicity(
        a in prop::array::uniform2(-4.0..4.0f64), b in prop::array::uniform2(-4.0..4.0f64),
    ) {
        let (x1, x2) = (DVector::from_row_slice(&a), DVector::from_row_slice(&b));
        let (y1, y2) = (generalized_prox(&x1), generalized_prox(&x2));
        // The symmetric part of the operator is 2 I.
        prop_assert!((&y1 - &y2).norm() <= (&x1 - &x2).norm() / 2.0 + 1e-9);
    }

    #[test]
    fn projection_is_feasible_and_idempotent(a in prop::array::uniform2(-3.0..3.0f64)) {
        let set = disk_cap();
        let z = project_onto_constraints(&set, 0.0, &DVector::from_row_slice(&a)).unwrap();
        prop_assert!(set.max_violation(0.0, &z) <= 1e-9);
        let again = project_onto_constraints(&set, 0.0, &z).unwrap();
        prop_assert!((&again - &z).amax() <= 1e-9);
    }
}

#[test]
fn step_outside_contraction_interval_is_rejected() {
    let p = build_problem(ParamOperator::identity(2), halfspace(), VectorPath::constant(DVector::zeros(2))).unwrap();
    assert!(solve_vi(&p, 0.0, &SolverParams::default().with_rho(2.0), None).is_err());
    assert!(solve_vi(&p, 0.0, &SolverParams::default().with_rho(1.5), None).is_ok());
}
