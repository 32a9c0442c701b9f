use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::qp::{solve_qp, QuadProgram};

/// Euclidean projection of `x` onto `{z : rows z <= rhs}`.
pub fn project_polyhedron(rows: &DMatrix<f64>, rhs: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    project_polyhedron_eq(&DMatrix::zeros(0, x.len()), &DVector::zeros(0), rows, rhs, x)
}

/// Projection onto `{z : eq_rows z = eq_rhs, rows z <= rhs}`.
pub fn project_polyhedron_eq(
    eq_rows: &DMatrix<f64>,
    eq_rhs: &DVector<f64>,
    rows: &DMatrix<f64>,
    rhs: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = x.len();
    if rows.ncols() != n || rows.nrows() != rhs.len() || eq_rows.ncols() != n || eq_rows.nrows() != eq_rhs.len() {
        return Err(Error::DimensionMismatch("polyhedron rows do not match the point".into()));
    }
    let qp = QuadProgram::new(DMatrix::identity(n, n), -x)
        .with_eq(eq_rows.clone(), eq_rhs.clone())
        .with_ineq(rows.clone(), rhs.clone());
    let sol = solve_qp(&qp).map_err(|e| match e {
        Error::QpInfeasible => Error::InfeasibleSet,
        other => other,
    })?;
    let res = qp.kkt_residual(&sol);
    let scale = 1.0 + x.amax() + rhs.amax();
    if res > 1e-10 * scale {
        return Err(Error::SubproblemDiverged(format!("projection KKT residual {res:e}")));
    }
    #[cfg(debug_assertions)]
    if n <= 3 && eq_rows.nrows() == 0 && rows.nrows() <= 8 {
        if let Some(b) = enumerate_projection(rows, rhs, x) {
            debug_assert!(
                (&b - &sol.x).amax() <= 1e-8 * scale,
                "active-set enumeration disagrees: {:?} vs {:?}",
                b.as_slice(),
                sol.x.as_slice()
            );
        }
    }
    Ok(sol.x)
}

/// Projection by trying every active set of size at most `n`: the answer
/// is the closest feasible candidate whose multipliers are nonnegative.
pub fn enumerate_projection(rows: &DMatrix<f64>, rhs: &DVector<f64>, x: &DVector<f64>) -> Option<DVector<f64>> {
    let n = x.len();
    let m = rows.nrows();
    let tol = 1e-9 * (1.0 + x.amax() + rhs.amax());
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << m) {
        let set: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() > n {
            continue;
        }
        let z = if set.is_empty() {
            x.clone()
        } else {
            let a = DMatrix::from_fn(set.len(), n, |i, j| rows[(set[i], j)]);
            let b = DVector::from_fn(set.len(), |i, _| rhs[set[i]]);
            // z = x - A'lambda with A z = b.
            let gram = &a * a.transpose();
            let Some(lambda) = gram.lu().solve(&(&a * x - &b)) else {
                continue;
            };
            if lambda.iter().any(|&l| l < -tol) {
                continue;
            }
            x - a.transpose() * &lambda
        };
        if (rows * &z - rhs).iter().any(|&s| s > tol) {
            continue;
        }
        let d = (&z - x).norm();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, z));
        }
    }
    best.map(|(_, z)| z)
}
