use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::extreal::ExtReal;
use crate::model::function::ParamFunction;
use crate::model::operator::ParamOperator;

/// `(f(tau, x + tau w) - f(tau, x) - tau <v, w>) / tau^2`.
pub fn delta2_quotient(f: &ParamFunction, x: &DVector<f64>, v: &DVector<f64>, tau: f64, w: &DVector<f64>) -> Result<ExtReal> {
    let base = quotient_base(f, x, v, tau)?;
    Ok(quotient_at(f, x, v, tau, w, base, boundary_slack(x, w, tau)))
}

/// `f(tau, x)`, checked to be finite.
pub(crate) fn quotient_base(f: &ParamFunction, x: &DVector<f64>, v: &DVector<f64>, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    if x.len() != f.dim() || v.len() != f.dim() {
        return Err(Error::DimensionMismatch("quotient point or subgradient".into()));
    }
    f.eval_relaxed(tau, x).finite().ok_or(Error::XNotInDomain)
}

/// Round-off slack for indicator rows at boundary points.
pub(crate) fn boundary_slack(x: &DVector<f64>, w: &DVector<f64>, tau: f64) -> f64 {
    1e-14 * (1.0 + x.amax() + tau * w.amax())
}

/// Quotient with a precomputed `f(tau, x)`; used in tight probe loops.
/// A constraint violation up to `slack` moves the value by about
/// `|v| slack / tau^2`, so searches over many points pass a smaller one.
pub(crate) fn quotient_at(
    f: &ParamFunction,
    x: &DVector<f64>,
    v: &DVector<f64>,
    tau: f64,
    w: &DVector<f64>,
    base: f64,
    slack: f64,
) -> ExtReal {
    let lin = tau * v.dot(w);
    match f {
        ParamFunction::ConstraintIndicator(c) => {
            return if c.rows().iter().all(|r| r.value_along(tau, x, w, tau) <= slack) {
                ExtReal::from_f64((-base - lin) / (tau * tau))
            } else {
                ExtReal::PlusInf
            };
        }
        ParamFunction::WeightedAbs(g) => {
            // |u + s| - |u| without subtracting two O(|u|) numbers.
            let u = x[0] - g.b.eval(tau);
            let step = tau * w[0];
            let diff = if u * (u + step) > 0.0 {
                u.signum() * step
            } else {
                (u + step).abs() - u.abs()
            };
            return ExtReal::from_f64((g.a.eval(tau) * diff - lin) / (tau * tau));
        }
        _ => {}
    }
    match f.eval_with_slack(tau, &(x + w * tau), slack) {
        ExtReal::Finite(fz) => ExtReal::from_f64((fz - base - lin) / (tau * tau)),
        other => other,
    }
}

/// `(A(tau, x + tau w) - v) / tau`.
pub fn delta_op_quotient(a: &ParamOperator, x: &DVector<f64>, v: &DVector<f64>, tau: f64, w: &DVector<f64>) -> Result<DVector<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    if x.len() != a.dim() || v.len() != a.dim() || w.len() != a.dim() {
        return Err(Error::DimensionMismatch("operator quotient arguments".into()));
    }
    Ok((a.eval(tau, &(x + w * tau)) - v) / tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::function::SmoothFn;
    use crate::model::path::ScalarPath;
    use nalgebra::DMatrix;

    fn s(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn moving_kink_examples() {
        let f = ParamFunction::weighted_abs(ScalarPath::constant(1.0), ScalarPath::polynomial(&[0.0, 1.0]));
        let q = delta2_quotient(&f, &s(0.0), &s(0.0), 0.1, &s(1.0)).unwrap();
        assert!((q.to_f64() + 10.0).abs() < 1e-12);
        let f = ParamFunction::weighted_abs(ScalarPath::constant(1.0), ScalarPath::polynomial(&[0.0, 0.0, 1.0]));
        assert_eq!(delta2_quotient(&f, &s(0.0), &s(0.0), 0.5, &s(0.5)).unwrap(), ExtReal::Finite(-1.0));
    }

    #[test]
    fn quadratic_is_exact() {
        let f = ParamFunction::Smooth(SmoothFn::quadratic(DMatrix::identity(1, 1), None, None, None));
        let q = delta2_quotient(&f, &s(1.0), &s(1.0), 0.1, &s(2.0)).unwrap();
        assert!((q.to_f64() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn operator_quotients() {
        let id = ParamOperator::identity(1);
        assert!((delta_op_quotient(&id, &s(0.0), &s(0.0), 0.1, &s(3.0)).unwrap()[0] - 3.0).abs() < 1e-12);
        let a = ParamOperator::new(1, |t, y| y * (1.0 + t), 2.0, 1.0);
        let q = delta_op_quotient(&a, &s(1.0), &s(1.0), 0.1, &s(0.0)).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-12);
        // (1.01^3 + 1.01 - 2) / 0.01 = 4.0301 exactly in real arithmetic.
        let c = ParamOperator::new(1, |_, y| y.map(|u| u * u * u + u), 10.0, 1.0);
        let q = delta_op_quotient(&c, &s(1.0), &s(2.0), 0.01, &s(1.0)).unwrap();
        assert!((q[0] - 4.0301).abs() < 1e-10, "{}", q[0]);
        let q = delta_op_quotient(&c, &s(1.0), &s(2.0), 1e-6, &s(1.0)).unwrap();
        assert!((q[0] - 4.0).abs() < 1e-5);
    }

    #[test]
    fn outside_domain_is_an_error() {
        let c = crate::model::function::Constraint::quadratic(None, s(-1.0), None, [0.0; 3]);
        let f = ParamFunction::ConstraintIndicator(crate::model::ConstraintSet::new(1, vec![c]));
        assert_eq!(delta2_quotient(&f, &s(-1.0), &s(0.0), 0.1, &s(0.0)), Err(Error::XNotInDomain));
        assert_eq!(delta2_quotient(&f, &s(0.0), &s(0.0), 0.1, &s(-1.0)).unwrap(), ExtReal::PlusInf);
    }
}
