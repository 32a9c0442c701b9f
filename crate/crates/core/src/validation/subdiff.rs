use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::epi::quotient::delta2_quotient;
use crate::error::{Error, Result};
use crate::model::extreal::ExtReal;
use crate::model::function::{ConstraintSet, ParamFunction};
use crate::model::interval::Interval;
use crate::model::problem::DEFAULT_SEED;

const ENDPOINT_TOL: f64 = 1e-10;
// Roundoff in the quotient grows like 1 / tau^2.
const NUMERIC_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct SubdiffRow {
    pub w: f64,
    /// Subdifferential of the quotient at `w`.
    pub quotient: (f64, f64),
    /// `(xi - v) / tau` over the subdifferential of `f(tau, .)` at `x + tau w`.
    pub scaled: (f64, f64),
    /// One-sided difference quotients of the quotient at `w`.
    pub numeric: (f64, f64),
    pub gap: f64,
    pub numeric_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubdiffReport {
    pub pass: bool,
    pub worst_gap: f64,
    /// Same comparison for one-sided difference quotients of the quotient.
    pub worst_numeric_gap: f64,
    pub rows: Vec<SubdiffRow>,
}

/// Subdifferential of a 1-D catalog function; empty outside the domain.
pub fn subdifferential_1d(f: &ParamFunction, t: f64, x: f64) -> Result<Interval> {
    if f.dim() != 1 {
        return Err(Error::UnsupportedVariant(format!("dimension {} is not 1", f.dim())));
    }
    let xv = DVector::from_element(1, x);
    match f {
        ParamFunction::WeightedAbs(w) => Ok(w.subdifferential(t, x, 1e-12 * (1.0 + x.abs()))),
        ParamFunction::Smooth(g) => Ok(Interval::point(g.grad_x(t, &xv)[0])),
        ParamFunction::ConstraintIndicator(c) => Ok(normal_cone_1d(c, t, x)),
        ParamFunction::Custom(_) => Err(Error::UnsupportedVariant(
            "custom functions have no analytic subdifferential".into(),
        )),
    }
}

fn normal_cone_1d(c: &ConstraintSet, t: f64, x: f64) -> Interval {
    let xv = DVector::from_element(1, x);
    let slack = 1e-14 * (1.0 + x.abs());
    let mut iv = Interval::point(0.0);
    for r in c.rows() {
        let val = r.value(t, &xv);
        if val > slack {
            return Interval::empty();
        }
        if val >= -slack {
            let g = r.grad_x(t, &xv)[0];
            if g > 0.0 {
                iv.hi = f64::INFINITY;
            } else if g < 0.0 {
                iv.lo = f64::NEG_INFINITY;
            }
        }
    }
    iv
}

/// Points where the quotient's pieces change: kinks of `f(tau, .)` and
/// boundary points of its domain, mapped to the `w` scale.
fn breakpoints(f: &ParamFunction, x: f64, tau: f64) -> Vec<f64> {
    let roots = match f {
        ParamFunction::WeightedAbs(w) => vec![w.b.eval(tau)],
        ParamFunction::ConstraintIndicator(c) => c
            .rows()
            .iter()
            .filter_map(|r| {
                // Affine rows only; curved rows have no single breakpoint.
                let zero = DVector::from_element(1, 0.0);
                let g = r.grad_x(tau, &zero)[0];
                (r.is_affine() && g != 0.0).then(|| -r.value(tau, &zero) / g)
            })
            .collect(),
        _ => Vec::new(),
    };
    roots.into_iter().map(|z| (z - x) / tau).collect()
}

/// Subdifferential of `w -> Delta^2_tau f(x|v)(w)` read off the quotient's
/// own structure: for `a|. - b|` it is `(a/tau)|w - theta| - (v/tau) w` plus
/// a constant, for an indicator it is the normal cone of `(C(tau) - x)/tau`.
fn quotient_subdifferential(f: &ParamFunction, x: f64, v: f64, tau: f64, w: f64) -> Result<Option<(f64, f64)>> {
    match f {
        ParamFunction::WeightedAbs(wa) => {
            let a = wa.a.eval(tau);
            let theta = (wa.b.eval(tau) - x) / tau;
            let d = w - theta;
            let (lo, hi) = if d.abs() <= 1e-12 * (1.0 + theta.abs()) {
                (-a, a)
            } else if d > 0.0 {
                (a, a)
            } else {
                (-a, -a)
            };
            Ok(Some(((lo - v) / tau, (hi - v) / tau)))
        }
        ParamFunction::Smooth(g) => {
            let grad = g.grad_x(tau, &DVector::from_element(1, x + tau * w))[0];
            Ok(Some(((grad - v) / tau, (grad - v) / tau)))
        }
        ParamFunction::ConstraintIndicator(c) => {
            let zero = DVector::from_element(1, 0.0);
            let point = DVector::from_element(1, x + tau * w);
            let slack = 1e-14 * (1.0 + w.abs());
            let (mut lo, mut hi) = (0.0, 0.0);
            for r in c.rows() {
                // Row as a function of w: slope * w + offset.
                let (slope, value) = if r.is_affine() {
                    let g = r.grad_x(tau, &zero)[0];
                    (g * tau, g * tau * w + g * x + r.value(tau, &zero))
                } else {
                    (r.grad_x(tau, &point)[0] * tau, r.value(tau, &point))
                };
                if value > slack * (1.0 + slope.abs()) {
                    return Ok(None);
                }
                if value >= -slack * (1.0 + slope.abs()) {
                    if slope > 0.0 {
                        hi = f64::INFINITY;
                    } else if slope < 0.0 {
                        lo = f64::NEG_INFINITY;
                    }
                }
            }
            Ok(Some(((lo - v) / tau, (hi - v) / tau)))
        }
        ParamFunction::Custom(_) => Err(Error::UnsupportedVariant(
            "custom functions have no analytic subdifferential".into(),
        )),
    }
}

fn quotient(f: &ParamFunction, x: f64, v: f64, tau: f64, w: f64) -> Result<ExtReal> {
    let s = |a: f64| DVector::from_element(1, a);
    delta2_quotient(f, &s(x), &s(v), tau, &s(w))
}

/// One-sided derivative of the quotient in direction `dir` using steps that
/// stay inside one piece, with one Richardson step.
fn one_sided(f: &ParamFunction, x: f64, v: f64, tau: f64, w: f64, dir: f64, eps: f64) -> Result<f64> {
    let q0 = quotient(f, x, v, tau, w)?.to_f64();
    let q1 = quotient(f, x, v, tau, w + dir * eps)?;
    let q2 = quotient(f, x, v, tau, w + dir * eps / 2.0)?;
    if q1.is_plus_inf() || q2.is_plus_inf() {
        return Ok(dir * f64::INFINITY);
    }
    let d1 = (q1.to_f64() - q0) / eps;
    let d2 = (q2.to_f64() - q0) / (eps / 2.0);
    Ok(dir * (2.0 * d2 - d1))
}

fn endpoint_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / (1.0 + a.abs().max(b.abs()))
    }
}

/// Checks that the subdifferential of the second-order quotient at sampled
/// `w` equals the scaled subdifferential of `f(tau, .)` at `x + tau w`.
pub fn subdiff_consistency(f: &ParamFunction, x: f64, v: f64, tau: f64, probes: usize) -> Result<SubdiffReport> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let base = subdifferential_1d(f, 0.0, x)?;
    if base.is_empty() {
        return Err(Error::XNotInDomain);
    }
    if !base.contains(v, 1e-12 * (1.0 + v.abs())) {
        return Err(Error::SubgradientInvalid(format!(
            "v = {v} is outside [{}, {}]",
            base.lo, base.hi
        )));
    }
    let breaks = breakpoints(f, x, tau);
    let center = breaks.first().copied().unwrap_or(0.0);
    let mut ws: Vec<f64> = breaks.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED ^ tau.to_bits());
    while ws.len() < probes.max(breaks.len()) {
        let w: f64 = center + rng.gen_range(-3.0..=3.0);
        // Stay clear of breakpoints so one-sided steps remain in one piece.
        if breaks.iter().all(|b| (w - b).abs() > 0.05) {
            ws.push(w);
        }
    }

    let mut rows = Vec::with_capacity(ws.len());
    let mut worst: f64 = 0.0;
    let mut worst_numeric: f64 = 0.0;
    for &w in &ws {
        let eps_for = |dir: f64| {
            breaks
                .iter()
                .map(|b| (b - w) * dir)
                .filter(|d| *d > 1e-12)
                .fold(0.5f64, |acc, d| acc.min(d / 2.0))
        };
        // Endpoints are kept as pairs: roundoff may order a point interval
        // the wrong way round, which is not emptiness.
        let scaled = subdifferential_1d(f, tau, x + tau * w)?;
        let scaled = (!scaled.is_empty()).then(|| ((scaled.lo - v) / tau, (scaled.hi - v) / tau));
        let q = quotient_subdifferential(f, x, v, tau, w)?;
        let numeric = if quotient(f, x, v, tau, w)?.is_plus_inf() {
            None
        } else {
            Some((
                one_sided(f, x, v, tau, w, -1.0, eps_for(-1.0))?,
                one_sided(f, x, v, tau, w, 1.0, eps_for(1.0))?,
            ))
        };
        let compare = |p: Option<(f64, f64)>, q: Option<(f64, f64)>| match (p, q) {
            (None, None) => 0.0,
            (Some(p), Some(q)) => endpoint_gap(p.0, q.0).max(endpoint_gap(p.1, q.1)),
            _ => f64::INFINITY,
        };
        let gap = compare(q, scaled);
        let numeric_gap = compare(numeric, scaled);
        let nan = (f64::NAN, f64::NAN);
        worst = worst.max(gap);
        worst_numeric = worst_numeric.max(numeric_gap);
        rows.push(SubdiffRow {
            w,
            quotient: q.unwrap_or(nan),
            scaled: scaled.unwrap_or(nan),
            numeric: numeric.unwrap_or(nan),
            gap,
            numeric_gap,
        });
    }
    Ok(SubdiffReport {
        pass: worst <= ENDPOINT_TOL && worst_numeric <= NUMERIC_TOL,
        worst_gap: worst,
        worst_numeric_gap: worst_numeric,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    use crate::model::function::{Constraint, SmoothFn};
    use crate::model::path::ScalarPath;

    fn halfline() -> ParamFunction {
        let c = Constraint::quadratic(None, DVector::from_element(1, -1.0), None, [0.0; 3]);
        ParamFunction::ConstraintIndicator(ConstraintSet::new(1, vec![c]))
    }

    #[test]
    fn weighted_abs_family() {
        let f = ParamFunction::weighted_abs(ScalarPath::polynomial(&[1.0, 1.0]), ScalarPath::polynomial(&[0.0, 0.0, 1.0]));
        let r = subdiff_consistency(&f, 1.0, 1.0, 0.25, 12).unwrap();
        assert!(r.pass, "{r:?}");
        // The kink of the quotient is probed.
        assert!(r.rows.iter().any(|row| row.quotient.0 < row.quotient.1));
    }

    #[test]
    fn quadratic_is_exact() {
        let g = ParamFunction::Smooth(SmoothFn::quadratic(DMatrix::identity(1, 1), None, None, None));
        for tau in [1.0, 0.3, 1e-3] {
            let r = subdiff_consistency(&g, 1.0, 1.0, tau, 8).unwrap();
            assert!(r.pass, "{tau}: {r:?}");
        }
    }

    #[test]
    fn halfline_indicator() {
        let f = halfline();
        let r = subdiff_consistency(&f, 0.0, 0.0, 0.25, 8).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.rows.iter().any(|row| row.quotient.0 == f64::NEG_INFINITY && row.numeric.0 == f64::NEG_INFINITY));
        assert!(subdiff_consistency(&f, 0.0, -1.0, 0.25, 8).unwrap().pass);
        assert!(matches!(
            subdiff_consistency(&f, 0.0, 1.0, 0.25, 8),
            Err(Error::SubgradientInvalid(_))
        ));
    }

    #[test]
    fn custom_is_unsupported() {
        let f = ParamFunction::Custom(crate::model::CustomFn::new(1, |_, _| ExtReal::ZERO, None));
        assert!(matches!(subdiff_consistency(&f, 0.0, 0.0, 1.0, 4), Err(Error::UnsupportedVariant(_))));
    }
}
