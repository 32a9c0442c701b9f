//! The derivative problem at `t = 0` and its solution `y'(0)`.

pub mod cone_qp;
pub mod min_problem;
pub mod semi;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::epi::second_order::{derive_second_order, DerivedSecondOrder, SecondOrderConfig, SecondOrderSummary};
use crate::error::{Error, HypothesisCheck, Result};
use crate::linalg::is_symmetric;
use crate::linalg::richardson::richardson;
use crate::model::problem::VIProblem;
use crate::prox::{solve_vi, SolverParams};

pub use cone_qp::{constrained_derivative_qp, solve_cone_qp, ConeQpSolution};
pub use min_problem::{derivative_min_problem, MinProblem};
pub use semi::{semi_derivative, semi_derivative_with, SemiDerivative, SemiSource, SemiSummary};

const RESIDUAL_PROBES: usize = 16;
const RESIDUAL_TOL: f64 = 1e-8;
const FIXED_POINT_TOL: f64 = 1e-13;
const FIXED_POINT_MAX_ITER: usize = 20_000;

pub const CLAUSE_RHS: &str = "rhs differentiable at 0";
pub const CLAUSE_OPERATOR: &str = "operator uniformly Lipschitz and strongly monotone";
pub const CLAUSE_SEMI: &str = "operator semi-differentiable at y0";
pub const CLAUSE_EPI: &str = "f twice epi-differentiable at y0 for v0";
pub const CLAUSE_PROPER: &str = "second epi-derivative proper, convex and lsc";

#[derive(Debug, Clone, Serialize)]
pub struct Residuals {
    /// Worst violation of the derivative inequality over the probes.
    pub derivative_vi: f64,
    /// Worst violation of the inequality at `t = 0` over the probes.
    pub base_vi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kkt: Option<f64>,
    /// Distance to the finite-difference estimate, when one was computed.
    pub fd_crosscheck: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeProblem {
    pub second_order: SecondOrderSummary,
    pub semi_derivative: SemiSummary,
    pub rhs_derivative: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub rho: f64,
    pub contraction_bound: f64,
    pub method: &'static str,
    pub derivative_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub y0: Vec<f64>,
    pub v0: Vec<f64>,
    pub yprime: Vec<f64>,
    pub hypotheses: Vec<HypothesisCheck>,
    pub residuals: Residuals,
    pub derivative_problem: DerivativeProblem,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub second_order: DerivedSecondOrder,
    #[serde(skip)]
    pub semi: SemiDerivative,
}

impl SensitivityReport {
    pub fn yprime(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.yprime)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Derivative of the right-hand side at 0: declared, or extrapolated from
/// forward quotients.
fn rhs_derivative(p: &VIProblem) -> (Option<DVector<f64>>, HypothesisCheck) {
    if let Some(d) = p.rhs().d0() {
        return (Some(d.clone()), HypothesisCheck::new(CLAUSE_RHS, true, "declared derivative"));
    }
    let h = 0.05f64.min(p.t_max());
    let x0 = p.rhs().eval(0.0);
    let qs: Vec<DVector<f64>> = (0..7)
        .map(|k| {
            let tau = h / (1u64 << k) as f64;
            (p.rhs().eval(tau) - &x0) / tau
        })
        .collect();
    let ex = richardson(&qs);
    let ok = ex.error <= 1e-6 * (1.0 + ex.estimate.amax());
    let check = HypothesisCheck::new(CLAUSE_RHS, ok, format!("extrapolated, tail {:e}", ex.error)).sampled();
    (ok.then_some(ex.estimate), check)
}

pub fn solve_sensitivity(p: &VIProblem, sp: &SolverParams) -> Result<SensitivityReport> {
    let mut checks = Vec::new();
    let (dx, rhs_check) = rhs_derivative(p);
    checks.push(rhs_check);
    let a = p.operator();
    checks.push(HypothesisCheck::new(
        CLAUSE_OPERATOR,
        true,
        format!("M = {}, alpha = {}, audited at construction", a.lipschitz(), a.strong_mono()),
    ));

    let sp0 = SolverParams {
        tol: sp.tol.min(1e-12),
        ..*sp
    };
    let base = solve_vi(p, 0.0, &sp0, None)?;
    let y0 = base.point();
    let x0 = p.rhs().eval(0.0);
    let mut v0 = &x0 - a.eval(0.0, &y0);
    // The critical cone keeps <w, v0> = 0 exactly, so roundoff in a zero
    // multiplier must not tilt it.
    if v0.amax() <= 1e-9 * (1.0 + x0.amax()) {
        v0.fill(0.0);
    }

    let semi = match semi_derivative_with(a, &y0, 0.05f64.min(p.t_max()), sp.seed) {
        Ok(s) => {
            checks.push(HypothesisCheck::new(
                CLAUSE_SEMI,
                true,
                match s.source {
                    SemiSource::Analytic => "analytic Jacobians".to_string(),
                    SemiSource::Numeric => format!("extrapolated limit, tail {:e}", s.tail.unwrap_or(0.0)),
                },
            ));
            Some(s)
        }
        Err(e @ (Error::NotSemidifferentiable(_) | Error::AuditFailed(_))) => {
            checks.push(HypothesisCheck::new(CLAUSE_SEMI, false, e.to_string()));
            None
        }
        Err(e) => return Err(e),
    };

    let outcome = derive_second_order(p.function(), &y0, &v0, &SecondOrderConfig::on_interval(p.t_max()))?;
    let failed: Vec<&HypothesisCheck> = outcome.checks.iter().filter(|c| !c.holds).collect();
    let detail = if failed.is_empty() {
        format!("closed form {}", outcome.derived.as_ref().map_or("-", |d| d.kind()))
    } else {
        failed.iter().map(|c| format!("{}: {}", c.clause, c.detail)).collect::<Vec<_>>().join("; ")
    };
    let certified = outcome.derived.is_some();
    checks.push(HypothesisCheck::new(CLAUSE_EPI, certified, detail.clone()));
    checks.push(HypothesisCheck::new(CLAUSE_PROPER, certified, detail));
    checks.extend(outcome.checks.iter().cloned());

    let (Some(dx), Some(semi), Some(derived)) = (dx, semi, outcome.derived) else {
        return Err(Error::HypothesisViolated(checks));
    };
    if checks.iter().any(|c| !c.holds) {
        return Err(Error::HypothesisViolated(checks));
    }

    let solved = solve_derivative_vi(&derived, &semi, &dx)?;
    let derivative_vi = derivative_residual(&derived, &semi, &dx, &solved.y, sp.seed)?;
    Ok(SensitivityReport {
        y0: y0.as_slice().to_vec(),
        v0: v0.as_slice().to_vec(),
        yprime: solved.y.as_slice().to_vec(),
        hypotheses: checks,
        residuals: Residuals {
            derivative_vi,
            base_vi: base.vi_violation,
            kkt: solved.kkt,
            fd_crosscheck: None,
        },
        derivative_problem: DerivativeProblem {
            second_order: derived.summary(),
            semi_derivative: semi.summary(),
            rhs_derivative: dx.as_slice().to_vec(),
        },
        diagnostics: Diagnostics {
            iterations: base.iterations,
            rho: base.rho,
            contraction_bound: base.contraction_bound,
            method: solved.method,
            derivative_iterations: solved.iterations,
        },
        second_order: derived,
        semi,
    })
}

struct DerivativeSolution {
    y: DVector<f64>,
    method: &'static str,
    iterations: usize,
    kkt: Option<f64>,
}

impl DerivativeSolution {
    fn closed(y: DVector<f64>, method: &'static str) -> Self {
        Self {
            y,
            method,
            iterations: 0,
            kkt: None,
        }
    }
}

fn linear_solve(m: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    m.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParameter("derivative system is singular".into()))
}

/// Solves `dx - S(y) in dD(y)` for the closed-form `D`.
fn solve_derivative_vi(d: &DerivedSecondOrder, semi: &SemiDerivative, dx: &DVector<f64>) -> Result<DerivativeSolution> {
    let j = &semi.jacobian;
    let drift = dx - &semi.shift;
    match d {
        DerivedSecondOrder::PointIndicator { point, .. } => Ok(DerivativeSolution::closed(point.clone(), "point")),
        DerivedSecondOrder::QuadraticPlusLinear { q, c } => {
            Ok(DerivativeSolution::closed(linear_solve(j + q, &drift - c)?, "linear system"))
        }
        DerivedSecondOrder::LinearOnCone { slope, cone, .. } => {
            let rhs = &drift - slope;
            if cone.eq.nrows() == 0 && cone.ineq.nrows() == 0 {
                return Ok(DerivativeSolution::closed(linear_solve(j.clone(), rhs)?, "linear system"));
            }
            if cone.dim() == 1 {
                let y = cone.interval().clamp(rhs[0] / j[(0, 0)]);
                return Ok(DerivativeSolution::closed(DVector::from_element(1, y), "clamped scalar"));
            }
            let rho = semi.strong_mono / (semi.lipschitz * semi.lipschitz);
            fixed_point(dx.len(), |y| {
                let z = y - (j * y - &rhs) * rho;
                cone.project(&z)
            })
            .map(|(y, it)| DerivativeSolution {
                y,
                method: "projected fixed point",
                iterations: it,
                kkt: None,
            })
        }
        DerivedSecondOrder::ConeQuadraticSupport {
            q,
            c,
            cone,
            polytope,
            curvature,
        } => {
            let n = dx.len();
            if is_symmetric(j, 1e-12) {
                let sol = solve_cone_qp(cone, polytope, &(j + q), &(c - &drift), curvature)?;
                return Ok(DerivativeSolution {
                    y: sol.x,
                    method: "cone program",
                    iterations: 0,
                    kkt: Some(sol.kkt_residual),
                });
            }
            // Non-symmetric part: iterate the prox of D, each step a cone program.
            let rho = semi.strong_mono / (semi.lipschitz * semi.lipschitz);
            let h = DMatrix::identity(n, n) / rho + q;
            let mut kkt: f64 = 0.0;
            let (y, it) = fixed_point(n, |y| {
                let z = y - (j * y - &drift) * rho;
                let sol = solve_cone_qp(cone, polytope, &h, &(c - &z / rho), curvature)?;
                kkt = kkt.max(sol.kkt_residual);
                Ok(sol.x)
            })?;
            Ok(DerivativeSolution {
                y,
                method: "prox fixed point",
                iterations: it,
                kkt: Some(kkt),
            })
        }
    }
}

fn fixed_point(n: usize, mut step: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>) -> Result<(DVector<f64>, usize)> {
    let mut y = DVector::zeros(n);
    let mut last = f64::NAN;
    for it in 1..=FIXED_POINT_MAX_ITER {
        let next = step(&y)?;
        last = (&next - &y).amax();
        y = next;
        if last <= FIXED_POINT_TOL * (1.0 + y.amax()) {
            return Ok((y, it));
        }
    }
    Err(Error::MaxIterExceeded {
        max_iter: FIXED_POINT_MAX_ITER,
        residual: last,
    })
}

/// Worst violation of `D(z) - D(y) >= <dx - S(y), z - y>` over probes, half
/// of them pulled into the domain of `D`.
fn derivative_residual(
    d: &DerivedSecondOrder,
    semi: &SemiDerivative,
    dx: &DVector<f64>,
    y: &DVector<f64>,
    seed: u64,
) -> Result<f64> {
    let n = y.len();
    let dy = d
        .eval(y)
        .finite()
        .ok_or_else(|| Error::ResidualCheck("derivative lies outside the domain of D".into()))?;
    let g = dx - semi.apply(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1ff);
    let radius = 1.0 + y.amax();
    let mut worst = f64::NEG_INFINITY;
    for k in 0..RESIDUAL_PROBES {
        let mut z = y + DVector::from_fn(n, |_, _| rng.gen_range(-radius..=radius));
        if k % 2 == 1 {
            z = match d {
                DerivedSecondOrder::PointIndicator { point, .. } => point.clone(),
                other => match other.cone() {
                    Some(cone) => cone.project(&z)?,
                    None => z,
                },
            };
        }
        let Some(dz) = d.eval(&z).finite() else { continue };
        let step = &z - y;
        let slack = dz - dy - g.dot(&step);
        let tol = RESIDUAL_TOL * (1.0 + dy.abs() + dz.abs() + g.norm() * step.norm());
        worst = worst.max(-slack - tol);
    }
    if worst > 0.0 {
        return Err(Error::ResidualCheck(format!(
            "derivative inequality fails by {worst:e} at a probe point"
        )));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::function::{Constraint, ConstraintSet, ParamFunction};
    use crate::model::operator::ParamOperator;
    use crate::model::path::{ScalarPath, VectorPath};
    use crate::model::problem::build_problem;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn scalar_abs(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> VIProblem {
        let op = ParamOperator::affine(
            DMatrix::from_element(1, 1, c[0]),
            Some(DMatrix::from_element(1, 1, *c.get(1).unwrap_or(&0.0))),
            None,
            None,
            1.0,
        );
        let f = ParamFunction::weighted_abs(ScalarPath::polynomial(a), ScalarPath::polynomial(b));
        let x = VectorPath::polynomial(d.iter().map(|&di| v(&[di])).collect()).unwrap();
        build_problem(op, f, x).unwrap()
    }

    #[test]
    fn moving_smooth_branch() {
        let p = scalar_abs(&[1.0, 1.0], &[0.0], &[1.0], &[3.0, 2.0]);
        let r = solve_sensitivity(&p, &SolverParams::default()).unwrap();
        assert!((r.y0[0] - 2.0).abs() < 1e-12);
        assert!((r.yprime[0] - 1.0).abs() < 1e-12);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["y0", "v0", "yprime", "hypotheses", "residuals"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn interior_kink_has_zero_derivative() {
        let p = scalar_abs(&[1.0], &[0.0], &[1.0], &[0.0]);
        let r = solve_sensitivity(&p, &SolverParams::default()).unwrap();
        assert_eq!(r.yprime, vec![0.0]);
    }

    #[test]
    fn linearly_moving_kink_is_refused() {
        let p = scalar_abs(&[1.0], &[0.0, 1.0], &[1.0], &[0.0]);
        match solve_sensitivity(&p, &SolverParams::default()) {
            Err(Error::HypothesisViolated(checks)) => {
                assert!(checks.iter().any(|c| c.clause == CLAUSE_PROPER && !c.holds));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn halfspace_drift() {
        let c = Constraint::quadratic(None, v(&[1.0, 1.0]), None, [-1.0, 0.0, 0.0]);
        let f = ParamFunction::ConstraintIndicator(ConstraintSet::new(2, vec![c]));
        let x = VectorPath::polynomial(vec![v(&[1.0, 1.0]), v(&[1.0, 0.0])]).unwrap();
        let p = build_problem(ParamOperator::identity(2), f, x).unwrap();
        let r = solve_sensitivity(&p, &SolverParams::default()).unwrap();
        assert!((r.yprime() - v(&[0.5, -0.5])).amax() < 1e-12);
        assert!(r.hypotheses.iter().any(|h| h.sampled_only));
    }

    #[test]
    fn nonsymmetric_operator_on_halfspace() {
        // A = [[2, 1], [-1, 2]] with the halfspace x1 + x2 <= 1.
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 2.0]);
        let c = Constraint::quadratic(None, v(&[1.0, 1.0]), None, [-1.0, 0.0, 0.0]);
        let f = ParamFunction::ConstraintIndicator(ConstraintSet::new(2, vec![c]));
        let x = VectorPath::polynomial(vec![v(&[4.0, 2.0]), v(&[1.0, 0.0])]).unwrap();
        let p = build_problem(ParamOperator::affine(m.clone(), None, None, None, 1.0), f, x).unwrap();
        let r = solve_sensitivity(&p, &SolverParams::default()).unwrap();
        assert_eq!(r.diagnostics.method, "prox fixed point");
        // On the line w = (a, -a) the residual A w - dx must be normal to it.
        let w = r.yprime();
        assert!((w[0] + w[1]).abs() < 1e-10);
        let g = &m * &w - v(&[1.0, 0.0]);
        assert!((g[0] - g[1]).abs() < 1e-9, "{g:?}");
    }
}
