use nalgebra::{DMatrix, DVector};

use crate::epi::second_order::{d2e_closed_form, DerivedSecondOrder};
use crate::error::{Error, Result};
use crate::linalg::qp::{solve_qp, QuadProgram};
use crate::model::extreal::ExtReal;
use crate::model::function::{ParamFunction, SmoothFn};
use crate::model::path::VectorPath;
use crate::sensitivity::cone_qp::constrained_derivative_qp;

/// `D(w) + 1/2 w'Qw + <linear, w>`, whose minimizer is `y'(0)` for
/// `min f(t, .) + g(t, .) - <l(t), .>`.
#[derive(Debug, Clone)]
pub struct MinProblem {
    pub second_order: DerivedSecondOrder,
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl MinProblem {
    pub fn objective(&self, w: &DVector<f64>) -> ExtReal {
        let smooth = 0.5 * w.dot(&(&self.hessian * w)) + self.linear.dot(w);
        match self.second_order.eval(w) {
            ExtReal::Finite(d) => ExtReal::Finite(d + smooth),
            other => other,
        }
    }

    pub fn minimize(&self) -> Result<DVector<f64>> {
        let q = &self.hessian;
        match &self.second_order {
            DerivedSecondOrder::PointIndicator { point, .. } => Ok(point.clone()),
            DerivedSecondOrder::QuadraticPlusLinear { q: dq, c } => {
                let qp = QuadProgram::new(q + dq, &self.linear + c);
                Ok(solve_qp(&qp)?.x)
            }
            DerivedSecondOrder::LinearOnCone { slope, cone, .. } => {
                let qp = QuadProgram::new(q.clone(), &self.linear + slope)
                    .with_eq(cone.eq.clone(), DVector::zeros(cone.eq.nrows()))
                    .with_ineq(cone.ineq.clone(), DVector::zeros(cone.ineq.nrows()));
                Ok(solve_qp(&qp)?.x)
            }
            DerivedSecondOrder::ConeQuadraticSupport {
                q: dq,
                c,
                cone,
                polytope,
                curvature,
            } => constrained_derivative_qp(cone, polytope, &(q + dq), &(&self.linear + c), curvature),
        }
    }
}

/// Objective data of the derivative minimization problem at the minimizer
/// `y0` of `f(0, .) + g(0, .) - <l(0), .>`.
pub fn derivative_min_problem(f: &ParamFunction, g: &SmoothFn, ell: &VectorPath, y0: &DVector<f64>) -> Result<MinProblem> {
    let n = y0.len();
    if f.dim() != n || g.dim() != n || ell.dim() != n {
        return Err(Error::DimensionMismatch("derivative minimization data".into()));
    }
    let dl = ell
        .d0()
        .cloned()
        .ok_or_else(|| Error::InvalidParameter("linear term needs a derivative at 0".into()))?;
    let l0 = ell.eval(0.0);
    let mut v0 = &l0 - g.grad_x(0.0, y0);
    if v0.amax() <= 1e-9 * (1.0 + l0.amax()) {
        v0.fill(0.0);
    }
    let second_order = d2e_closed_form(f, y0, &v0)?;
    Ok(MinProblem {
        second_order,
        hessian: g.hess_xx(0.0, y0),
        linear: g.hess_tx(0.0, y0) - dl,
    })
}
