use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::epi::cone::{active_tol, cone_k, polytope_y, simplex_min_norm, support_y, ConeSummary, PolyCone, Polytope};
use crate::error::{Error, HypothesisCheck, Result};
use crate::linalg::min_sym_eigenvalue;
use crate::model::extreal::ExtReal;
use crate::model::function::{ConstraintSet, ParamFunction, SmoothFn, WeightedAbs};

/// Second-order data of one constraint component at `(0, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureTerm {
    pub hess_xx: DMatrix<f64>,
    pub hess_tx: DVector<f64>,
    pub hess_tt: f64,
}

/// `x -> 1/2 D^2 F(0, y)(1, x)`, one entry per constraint component.
#[derive(Debug, Clone, PartialEq)]
pub struct Curvature {
    pub terms: Vec<CurvatureTerm>,
}

impl Curvature {
    pub fn half_second_differential(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.terms.len(),
            self.terms
                .iter()
                .map(|c| 0.5 * (c.hess_tt + 2.0 * c.hess_tx.dot(x) + x.dot(&(&c.hess_xx * x)))),
        )
    }

    pub fn is_zero(&self) -> bool {
        self.terms
            .iter()
            .all(|c| c.hess_tt == 0.0 && c.hess_tx.iter().all(|&v| v == 0.0) && c.hess_xx.iter().all(|&v| v == 0.0))
    }
}

/// Closed-form second epi-derivative.
#[derive(Debug, Clone, PartialEq)]
pub enum DerivedSecondOrder {
    /// `<slope, w> + offset` on the cone, `+inf` off it.
    LinearOnCone { slope: DVector<f64>, offset: f64, cone: PolyCone },
    /// `offset` at `point`, `+inf` elsewhere.
    PointIndicator { point: DVector<f64>, offset: f64 },
    /// `1/2 w'Qw + c'w`.
    QuadraticPlusLinear { q: DMatrix<f64>, c: DVector<f64> },
    /// `1/2 w'Qw + c'w + max over the polytope of <u, 1/2 D^2F(1, w)>` on
    /// the cone.
    ConeQuadraticSupport {
        q: DMatrix<f64>,
        c: DVector<f64>,
        cone: PolyCone,
        polytope: Polytope,
        curvature: Curvature,
    },
}

pub(crate) fn membership_tol(w: &DVector<f64>) -> f64 {
    1e-9 * (1.0 + w.amax())
}

impl DerivedSecondOrder {
    pub fn dim(&self) -> usize {
        match self {
            DerivedSecondOrder::LinearOnCone { slope, .. } => slope.len(),
            DerivedSecondOrder::PointIndicator { point, .. } => point.len(),
            DerivedSecondOrder::QuadraticPlusLinear { c, .. } => c.len(),
            DerivedSecondOrder::ConeQuadraticSupport { c, .. } => c.len(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DerivedSecondOrder::LinearOnCone { .. } => "LINEAR_ON_CONE",
            DerivedSecondOrder::PointIndicator { .. } => "POINT_INDICATOR",
            DerivedSecondOrder::QuadraticPlusLinear { .. } => "QUADRATIC_PLUS_LINEAR",
            DerivedSecondOrder::ConeQuadraticSupport { .. } => "CONE_QUADRATIC_SUPPORT",
        }
    }

    /// Domain cone, when the function is an indicator-type restriction.
    pub fn cone(&self) -> Option<&PolyCone> {
        match self {
            DerivedSecondOrder::LinearOnCone { cone, .. } | DerivedSecondOrder::ConeQuadraticSupport { cone, .. } => Some(cone),
            _ => None,
        }
    }

    pub fn eval(&self, w: &DVector<f64>) -> ExtReal {
        let tol = membership_tol(w);
        match self {
            DerivedSecondOrder::LinearOnCone { slope, offset, cone } => {
                if cone.contains(w, tol) {
                    ExtReal::Finite(slope.dot(w) + offset)
                } else {
                    ExtReal::PlusInf
                }
            }
            DerivedSecondOrder::PointIndicator { point, offset } => {
                if (w - point).amax() <= tol {
                    ExtReal::Finite(*offset)
                } else {
                    ExtReal::PlusInf
                }
            }
            DerivedSecondOrder::QuadraticPlusLinear { q, c } => ExtReal::Finite(0.5 * w.dot(&(q * w)) + c.dot(w)),
            DerivedSecondOrder::ConeQuadraticSupport {
                q,
                c,
                cone,
                polytope,
                curvature,
            } => {
                if cone.contains(w, tol) {
                    let support = support_y(polytope, &curvature.half_second_differential(w));
                    ExtReal::Finite(0.5 * w.dot(&(q * w)) + c.dot(w) + support)
                } else {
                    ExtReal::PlusInf
                }
            }
        }
    }

    pub fn summary(&self) -> SecondOrderSummary {
        let vec = |v: &DVector<f64>| v.as_slice().to_vec();
        let mat = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        match self {
            DerivedSecondOrder::LinearOnCone { slope, offset, cone } => SecondOrderSummary {
                kind: self.kind(),
                slope: Some(vec(slope)),
                offset: Some(*offset),
                cone: Some(cone.summary()),
                ..Default::default()
            },
            DerivedSecondOrder::PointIndicator { point, offset } => SecondOrderSummary {
                kind: self.kind(),
                point: Some(vec(point)),
                offset: Some(*offset),
                ..Default::default()
            },
            DerivedSecondOrder::QuadraticPlusLinear { q, c } => SecondOrderSummary {
                kind: self.kind(),
                q: Some(mat(q)),
                c: Some(vec(c)),
                ..Default::default()
            },
            DerivedSecondOrder::ConeQuadraticSupport { q, c, cone, polytope, .. } => SecondOrderSummary {
                kind: self.kind(),
                q: Some(mat(q)),
                c: Some(vec(c)),
                cone: Some(cone.summary()),
                polytope: Some(polytope.summary()),
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SecondOrderSummary {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cone: Option<ConeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polytope: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct SecondOrderConfig {
    /// Parameter values where `t`-uniform hypotheses are sampled.
    pub t_grid: Vec<f64>,
}

impl Default for SecondOrderConfig {
    fn default() -> Self {
        Self::on_interval(1.0)
    }
}

impl SecondOrderConfig {
    pub fn on_interval(t_max: f64) -> Self {
        Self {
            t_grid: (0..=100).map(|k| t_max * k as f64 / 100.0).collect(),
        }
    }
}

/// The closed form, or `None` when a hypothesis failed; the checks are
/// reported either way.
#[derive(Debug, Clone)]
pub struct SecondOrderOutcome {
    pub derived: Option<DerivedSecondOrder>,
    pub checks: Vec<HypothesisCheck>,
}

/// Closed-form second epi-derivative of a catalog function at `x` for the
/// subgradient `v`.
pub fn d2e_closed_form(f: &ParamFunction, x: &DVector<f64>, v: &DVector<f64>) -> Result<DerivedSecondOrder> {
    let out = derive_second_order(f, x, v, &SecondOrderConfig::default())?;
    out.derived.ok_or(Error::HypothesisViolated(out.checks))
}

pub fn derive_second_order(
    f: &ParamFunction,
    x: &DVector<f64>,
    v: &DVector<f64>,
    cfg: &SecondOrderConfig,
) -> Result<SecondOrderOutcome> {
    if x.len() != f.dim() || v.len() != f.dim() {
        return Err(Error::DimensionMismatch("second-order point or subgradient".into()));
    }
    match f {
        ParamFunction::WeightedAbs(w) => weighted_abs(w, x[0], v[0]),
        ParamFunction::Smooth(g) => smooth(g, x, v),
        ParamFunction::ConstraintIndicator(c) => constraints(c, x, v, cfg),
        ParamFunction::Custom(_) => Err(Error::UnsupportedVariant(
            "no closed-form second epi-derivative for custom functions".into(),
        )),
    }
}

/// Constant of the interior-multiplier case at a kink that moves to
/// second order: `((a0 - v) / 2) b'' - a0 max(b'', 0)`.
pub fn interior_kink_offset(a0: f64, b_second: f64, v: f64) -> f64 {
    0.5 * (a0 - v) * b_second - a0 * b_second.max(0.0)
}

fn weighted_abs(w: &WeightedAbs, x: f64, v: f64) -> Result<SecondOrderOutcome> {
    let a0 = w.a.eval(0.0);
    let b0 = w.b.eval(0.0);
    let kink_tol = 1e-12 * (1.0 + b0.abs());
    let sub = w.subdifferential(0.0, x, kink_tol);
    let vtol = 1e-9 * (1.0 + a0);
    if !sub.contains(v, vtol) {
        return Err(Error::SubgradientInvalid(format!(
            "v = {v} is outside [{}, {}]",
            sub.lo, sub.hi
        )));
    }
    let da = w.a.derivative_at_zero();
    let db = w.b.derivative_at_zero();
    let ddb = w.b.second_derivative_at_zero();
    let flat = db.abs() <= 1e-9 * (1.0 + ddb.abs());
    let checks = vec![
        HypothesisCheck::new(
            "kink moves to second order: b'(0) = 0",
            flat,
            format!("b'(0) = {db}"),
        ),
        HypothesisCheck::new(
            "b twice differentiable at 0",
            ddb.is_finite(),
            format!("b''(0) = {ddb}"),
        ),
    ];
    if !flat || !ddb.is_finite() {
        return Ok(SecondOrderOutcome { derived: None, checks });
    }
    let one = |s: f64| DVector::from_element(1, s);
    let derived = if (x - b0).abs() > kink_tol {
        let slope = if x > b0 { da } else { -da };
        DerivedSecondOrder::LinearOnCone {
            slope: one(slope),
            offset: 0.0,
            cone: PolyCone::whole_space(1),
        }
    } else if (v - a0).abs() <= vtol {
        DerivedSecondOrder::LinearOnCone {
            slope: one(da),
            offset: -a0 * ddb.max(0.0),
            cone: PolyCone::nonnegative_line(),
        }
    } else if (v + a0).abs() <= vtol {
        DerivedSecondOrder::LinearOnCone {
            slope: one(-da),
            offset: -a0 * (-ddb).max(0.0),
            cone: PolyCone::nonpositive_line(),
        }
    } else {
        DerivedSecondOrder::PointIndicator {
            point: one(0.0),
            offset: interior_kink_offset(a0, ddb, v),
        }
    };
    Ok(SecondOrderOutcome {
        derived: Some(derived),
        checks,
    })
}

fn smooth(g: &SmoothFn, x: &DVector<f64>, v: &DVector<f64>) -> Result<SecondOrderOutcome> {
    let grad = g.grad_x(0.0, x);
    if (&grad - v).amax() > 1e-8 * (1.0 + v.amax()) {
        return Err(Error::SubgradientInvalid(format!(
            "v differs from the gradient {:?}",
            grad.as_slice()
        )));
    }
    let q = g.hess_xx(0.0, x);
    let c = g.hess_tx(0.0, x);
    let lam = min_sym_eigenvalue(&q);
    let checks = vec![HypothesisCheck::new(
        "Hessian positive semidefinite",
        lam >= -1e-10,
        format!("smallest eigenvalue {lam}"),
    )];
    let derived = (lam >= -1e-10).then_some(DerivedSecondOrder::QuadraticPlusLinear { q, c });
    Ok(SecondOrderOutcome { derived, checks })
}

fn constraints(c: &ConstraintSet, y: &DVector<f64>, v: &DVector<f64>, cfg: &SecondOrderConfig) -> Result<SecondOrderOutcome> {
    let cone = cone_k(c, y, v)?;
    let polytope = match polytope_y(c, y, v) {
        Ok(p) => Some(p),
        Err(Error::EmptyY) => {
            return Err(Error::SubgradientInvalid(
                "no nonnegative multipliers reproduce v".into(),
            ))
        }
        Err(Error::UnboundedY) => None,
        Err(e) => return Err(e),
    };
    let tol = active_tol(y);
    let mut checks = Vec::new();

    let worst_dt = c
        .rows()
        .iter()
        .map(|r| r.grad_t(0.0, y).abs())
        .fold(0.0, f64::max);
    checks.push(HypothesisCheck::new(
        "constraints stationary in t at y",
        worst_dt <= 1e-9,
        format!("max |d/dt F_i(0, y)| = {worst_dt:e}"),
    ));

    let worst_feas = cfg
        .t_grid
        .iter()
        .map(|&t| c.max_violation(t, y))
        .fold(0.0, f64::max);
    checks.push(
        HypothesisCheck::new(
            "y feasible for every t",
            worst_feas <= tol,
            format!("max violation {worst_feas:e} over {} grid points", cfg.t_grid.len()),
        )
        .sampled(),
    );

    let active: Vec<usize> = (0..c.len()).filter(|&i| c.rows()[i].value(0.0, y) >= -tol).collect();
    let mut bound = f64::INFINITY;
    for &t in &cfg.t_grid {
        let mut m = DMatrix::zeros(active.len(), c.dim());
        for (k, &i) in active.iter().enumerate() {
            m.set_row(k, &c.rows()[i].grad_x(t, y).transpose());
        }
        bound = bound.min(simplex_min_norm(&m)?);
    }
    let surjective = bound > 1e-8 && polytope.is_some();
    checks.push(
        HypothesisCheck::new(
            "uniform surjectivity of active constraint gradients",
            surjective,
            if active.is_empty() {
                "no active constraints".to_string()
            } else {
                format!("min over simplex and t-grid of |grad F' w| = {bound:e}")
            },
        )
        .sampled(),
    );

    let derived = match polytope {
        Some(polytope) if checks.iter().all(|ch| ch.holds) => {
            let n = c.dim();
            let curvature = Curvature {
                terms: c
                    .rows()
                    .iter()
                    .map(|r| CurvatureTerm {
                        hess_xx: r.hess_xx(0.0, y),
                        hess_tx: r.hess_tx(0.0, y),
                        hess_tt: r.hess_tt(0.0, y),
                    })
                    .collect(),
            };
            Some(DerivedSecondOrder::ConeQuadraticSupport {
                q: DMatrix::zeros(n, n),
                c: DVector::zeros(n),
                cone,
                polytope,
                curvature,
            })
        }
        _ => None,
    };
    Ok(SecondOrderOutcome { derived, checks })
}
