use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::qp::{solve_qp, QuadProgram};
use crate::model::function::ConstraintSet;

const MAX_SQP_ITER: usize = 200;

/// KKT residual of `z` as the projection of `x` with multipliers `lambda`.
pub fn projection_kkt_residual(c: &ConstraintSet, t: f64, x: &DVector<f64>, z: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let mut grad = z - x;
    let mut r: f64 = 0.0;
    for (i, row) in c.rows().iter().enumerate() {
        let f = row.value(t, z);
        grad += row.grad_x(t, z) * lambda[i];
        r = r.max(f.max(0.0)).max((lambda[i] * f).abs()).max((-lambda[i]).max(0.0));
    }
    r.max(grad.amax())
}

/// Projection onto `{z : F_i(t, z) <= 0}` for smooth convex `F_i` by
/// sequential linearized projections with an l1 merit line search.
/// Returns the point and its multipliers.
pub fn project_convex_set(c: &ConstraintSet, t: f64, x: &DVector<f64>, tol: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = x.len();
    let d = c.len();
    if c.rows().iter().all(|r| r.value(t, x) <= 0.0) {
        return Ok((x.clone(), DVector::zeros(d)));
    }
    let accept = tol * (1.0 + x.amax());
    let max_step = 10.0 * (1.0 + x.norm());
    let mut z = x.clone();
    let mut lambda: DVector<f64> = DVector::zeros(d);
    let mut nu: f64 = 1.0;
    let merit = |z: &DVector<f64>, nu: f64| {
        0.5 * (z - x).norm_squared() + nu * c.rows().iter().map(|r| r.value(t, z).max(0.0)).sum::<f64>()
    };

    for _ in 0..MAX_SQP_ITER {
        let mut h = DMatrix::identity(n, n);
        for (i, row) in c.rows().iter().enumerate() {
            if lambda[i] > 0.0 {
                h += row.hess_xx(t, &z) * lambda[i];
            }
        }
        let jac = c.jacobian(t, &z);
        let vals = c.values(t, &z);
        let qp = QuadProgram::new(h, &z - x).with_ineq(jac, -&vals);
        let sol = solve_qp(&qp).map_err(|e| match e {
            Error::QpInfeasible => Error::InfeasibleSet,
            other => other,
        })?;
        let mut step = sol.x;
        let mu = sol.ineq_mult;
        let len = step.norm();
        if len > max_step {
            step *= max_step / len;
        }
        nu = nu.max(2.0 * mu.amax() + 1.0);

        let violation: f64 = vals.iter().map(|v| v.max(0.0)).sum();
        let slope = (&z - x).dot(&step) - nu * violation;
        let phi0 = merit(&z, nu);
        let mut alpha = 1.0;
        loop {
            let trial = &z + &step * alpha;
            if merit(&trial, nu) <= phi0 + 1e-4 * alpha * slope.min(0.0) || alpha < 1e-12 {
                z = trial;
                break;
            }
            alpha *= 0.5;
        }
        lambda = &lambda + (mu - &lambda) * alpha;

        if projection_kkt_residual(c, t, x, &z, &lambda) <= accept {
            return Ok((z, lambda));
        }
        if step.amax() * alpha <= 1e-16 * (1.0 + z.amax()) {
            break;
        }
    }
    let res = projection_kkt_residual(c, t, x, &z, &lambda);
    if res <= accept {
        Ok((z, lambda))
    } else {
        Err(Error::SubproblemDiverged(format!(
            "nonlinear projection stalled with KKT residual {res:e}"
        )))
    }
}
