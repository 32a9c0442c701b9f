//! Minimization of `1/2 x'Qx + <c, x> + max_j phi_j(x)` over a polyhedral
//! cone, where `phi_j(x) = <u_j, 1/2 D^2 F(0, y)(1, x)>` for the vertices
//! `u_j` of the multiplier polytope.

use nalgebra::{DMatrix, DVector};

use crate::epi::cone::{PolyCone, Polytope};
use crate::epi::second_order::Curvature;
use crate::error::{Error, Result};
use crate::linalg::qp::{solve_qp, QuadProgram};
use crate::model::function::{Constraint, ConstraintSet};
use crate::prox::nonlinear::{project_convex_set, projection_kkt_residual};

const KKT_TOL: f64 = 1e-8;
const BISECTION_STEPS: usize = 200;

/// One vertex piece `1/2 x'Px + h'x + c`.
#[derive(Debug, Clone)]
struct Piece {
    p: DMatrix<f64>,
    h: DVector<f64>,
    c: f64,
}

impl Piece {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.h.dot(x) + self.c
    }
}

fn pieces(polytope: &Polytope, curvature: &Curvature, n: usize) -> Result<Vec<Piece>> {
    let mut out: Vec<Piece> = Vec::new();
    for u in &polytope.vertices {
        if u.len() != curvature.terms.len() {
            return Err(Error::DimensionMismatch("multiplier vertex and curvature terms".into()));
        }
        let mut piece = Piece {
            p: DMatrix::zeros(n, n),
            h: DVector::zeros(n),
            c: 0.0,
        };
        for (ui, term) in u.iter().zip(&curvature.terms) {
            if *ui != 0.0 {
                piece.p += &term.hess_xx * *ui;
                piece.h += &term.hess_tx * *ui;
                piece.c += 0.5 * term.hess_tt * *ui;
            }
        }
        let dup = out.iter().any(|o| {
            (&o.p - &piece.p).amax() <= 1e-14 && (&o.h - &piece.h).amax() <= 1e-14 && (o.c - piece.c).abs() <= 1e-14
        });
        if !dup {
            out.push(piece);
        }
    }
    Ok(out)
}

fn nonzero_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..m.nrows()).filter(|&i| m.row(i).amax() > 0.0).collect();
    DMatrix::from_fn(keep.len(), m.ncols(), |i, j| m[(keep[i], j)])
}

/// Minimizer and KKT residual of the cone-constrained problem.
#[derive(Debug, Clone)]
pub struct ConeQpSolution {
    pub x: DVector<f64>,
    pub kkt_residual: f64,
    /// Number of distinct vertex pieces in the objective.
    pub pieces: usize,
}

pub fn constrained_derivative_qp(
    cone: &PolyCone,
    polytope: &Polytope,
    q: &DMatrix<f64>,
    linear: &DVector<f64>,
    curvature: &Curvature,
) -> Result<DVector<f64>> {
    solve_cone_qp(cone, polytope, q, linear, curvature).map(|s| s.x)
}

pub fn solve_cone_qp(
    cone: &PolyCone,
    polytope: &Polytope,
    q: &DMatrix<f64>,
    linear: &DVector<f64>,
    curvature: &Curvature,
) -> Result<ConeQpSolution> {
    let n = linear.len();
    if cone.dim() != n || q.nrows() != n || q.ncols() != n || polytope.dim() != curvature.terms.len() {
        return Err(Error::DimensionMismatch("derivative program data".into()));
    }
    let eq = nonzero_rows(&cone.eq);
    let ineq = nonzero_rows(&cone.ineq);
    let pieces = pieces(polytope, curvature, n)?;
    let scale = 1.0 + linear.amax() + q.amax();

    if pieces.len() == 1 {
        let piece = &pieces[0];
        let qp = QuadProgram::new(q + &piece.p, linear + &piece.h)
            .with_eq(eq.clone(), DVector::zeros(eq.nrows()))
            .with_ineq(ineq.clone(), DVector::zeros(ineq.nrows()));
        let sol = solve_qp(&qp)?;
        let kkt = qp.kkt_residual(&sol);
        if kkt > KKT_TOL * scale {
            return Err(Error::ResidualCheck(format!("derivative program KKT residual {kkt:e}")));
        }
        return Ok(ConeQpSolution {
            x: sol.x,
            kkt_residual: kkt,
            pieces: 1,
        });
    }
    epigraph(&eq, &ineq, q, linear, &pieces, scale)
}

/// Reduced problem on the null space of the equality rows, rewritten as a
/// projection through the Cholesky factor of the Hessian.
struct Reduced {
    basis: DMatrix<f64>,
    // x = basis * chol_inv_t * u
    to_x: DMatrix<f64>,
    target: DVector<f64>,
    rows: Vec<Constraint>,
    pieces: Vec<Piece>,
}

impl Reduced {
    fn new(eq: &DMatrix<f64>, ineq: &DMatrix<f64>, q: &DMatrix<f64>, linear: &DVector<f64>, pieces: &[Piece]) -> Result<Self> {
        let n = linear.len();
        let basis = null_space(eq, n);
        let k = basis.ncols();
        let qz = basis.transpose() * q * &basis;
        let chol = qz.cholesky().ok_or(Error::QpUnbounded)?;
        let l = chol.l();
        let l_inv = l.clone().try_inverse().ok_or(Error::QpUnbounded)?;
        let to_z = l_inv.transpose();
        let to_x = &basis * &to_z;
        let target = -(&l_inv * (basis.transpose() * linear));
        let mut rows = Vec::new();
        for i in 0..ineq.nrows() {
            let g = to_x.transpose() * ineq.row(i).transpose();
            rows.push(Constraint::quadratic(None, g, None, [0.0; 3]));
        }
        let red: Vec<Piece> = pieces
            .iter()
            .map(|p| Piece {
                p: to_x.transpose() * &p.p * &to_x,
                h: to_x.transpose() * &p.h,
                c: p.c,
            })
            .collect();
        debug_assert_eq!(target.len(), k);
        Ok(Self {
            basis,
            to_x,
            target,
            rows,
            pieces: red,
        })
    }

    fn set(&self, level: f64) -> ConstraintSet {
        let k = self.target.len();
        let mut rows: Vec<Constraint> = self
            .pieces
            .iter()
            .map(|p| Constraint::quadratic(Some(p.p.clone()), p.h.clone(), None, [p.c - level, 0.0, 0.0]))
            .collect();
        rows.extend(self.rows.iter().cloned());
        ConstraintSet::new(k, rows)
    }

    /// Projection at epigraph level `level` and the sum of the piece
    /// multipliers; an infeasible level reports an infinite sum.
    fn solve(&self, level: f64) -> Result<(DVector<f64>, DVector<f64>, f64)> {
        let set = self.set(level);
        let result = if set.is_affine() {
            let k = self.target.len();
            let (rows, rhs) = set.linear_rows(0.0);
            let qp = QuadProgram::new(DMatrix::identity(k, k), -&self.target).with_ineq(rows, rhs);
            solve_qp(&qp).map(|s| (s.x, s.ineq_mult)).map_err(|e| match e {
                Error::QpInfeasible => Error::InfeasibleSet,
                other => other,
            })
        } else {
            project_convex_set(&set, 0.0, &self.target, 1e-11)
        };
        match result {
            Ok((u, lambda)) => {
                let total = lambda.rows(0, self.pieces.len()).sum();
                Ok((u, lambda, total))
            }
            Err(Error::InfeasibleSet) => Ok((DVector::zeros(0), DVector::zeros(0), f64::INFINITY)),
            Err(e) => Err(e),
        }
    }
}

fn null_space(eq: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if eq.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = eq.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * smax).count();
    // Rows of v_t past the rank span the null space; pad when v_t is thin.
    let full = if v_t.nrows() < n {
        let mut ext = DMatrix::zeros(n, n);
        ext.view_mut((0, 0), (v_t.nrows(), n)).copy_from(&v_t);
        let range = v_t.rows(0, rank).transpose();
        let proj = DMatrix::identity(n, n) - &range * range.transpose();
        let rest = proj.svd(true, false).u.expect("requested");
        for i in rank..n {
            ext.set_row(i, &rest.column(i - rank).transpose());
        }
        ext
    } else {
        v_t
    };
    full.rows(rank, n - rank).transpose()
}

/// `min 1/2 x'Qx + c'x + s  s.t.  phi_j(x) <= s, x in K`, solved by bisection
/// on the level `s` until the piece multipliers sum to one.
fn epigraph(
    eq: &DMatrix<f64>,
    ineq: &DMatrix<f64>,
    q: &DMatrix<f64>,
    linear: &DVector<f64>,
    pieces: &[Piece],
    scale: f64,
) -> Result<ConeQpSolution> {
    let n = linear.len();
    let red = Reduced::new(eq, ineq, q, linear, pieces)?;
    if red.basis.ncols() == 0 {
        return Ok(ConeQpSolution {
            x: DVector::zeros(n),
            kkt_residual: 0.0,
            pieces: pieces.len(),
        });
    }
    // Level at which no piece constrains the minimizer.
    let free = ConstraintSet::new(red.target.len(), red.rows.clone());
    let (u_free, _) = project_convex_set(&free, 0.0, &red.target, 1e-11)?;
    let mut hi = red.pieces.iter().map(|p| p.eval(&u_free)).fold(f64::NEG_INFINITY, f64::max);
    let mut step = 1.0 + hi.abs();
    let mut lo = hi - step;
    let mut found = false;
    for _ in 0..64 {
        if red.solve(lo)?.2 >= 1.0 {
            found = true;
            break;
        }
        hi = lo;
        step *= 2.0;
        lo = hi - step;
    }
    if !found {
        return Err(Error::QpUnbounded);
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if red.solve(mid)?.2 >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (u, lambda, total) = red.solve(hi)?;
    if !total.is_finite() {
        return Err(Error::ResidualCheck("epigraph level search ended at an infeasible level".into()));
    }
    let set = red.set(hi);
    let proj = projection_kkt_residual(&set, 0.0, &red.target, &u, &lambda);
    let kkt = proj.max((total - 1.0).abs() * scale.min(1.0));
    if kkt > KKT_TOL * scale {
        return Err(Error::ResidualCheck(format!("epigraph program KKT residual {kkt:e}")));
    }
    Ok(ConeQpSolution {
        x: &red.to_x * u,
        kkt_residual: kkt,
        pieces: pieces.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epi::second_order::CurvatureTerm;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn flat(n: usize, rows: usize) -> Curvature {
        Curvature {
            terms: (0..rows)
                .map(|_| CurvatureTerm {
                    hess_xx: DMatrix::zeros(n, n),
                    hess_tx: DVector::zeros(n),
                    hess_tt: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn halfspace_projection_of_the_drift() {
        let cone = PolyCone::new(DMatrix::from_row_slice(1, 2, &[0.5, 0.5]), DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        let y = Polytope::new(vec![v(&[0.5])]).unwrap();
        let x = constrained_derivative_qp(&cone, &y, &DMatrix::identity(2, 2), &v(&[-1.0, 0.0]), &flat(2, 1)).unwrap();
        assert!((x - v(&[0.5, -0.5])).amax() < 1e-14);
    }

    #[test]
    fn no_active_constraints_is_a_linear_solve() {
        let cone = PolyCone::whole_space(2);
        let y = Polytope::new(vec![DVector::zeros(0)]).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let x = constrained_derivative_qp(&cone, &y, &q, &v(&[2.0, -4.0]), &Curvature { terms: vec![] }).unwrap();
        assert!((x - v(&[-1.0, 1.0])).amax() < 1e-14);
    }

    #[test]
    fn max_of_two_pieces() {
        // min 1/2 |x|^2 - x1 + max(x1/2 - x2/2, x2/2 - x1/2) on x1 + x2 = 0.
        let cone = PolyCone::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DMatrix::zeros(0, 2));
        let y = Polytope::new(vec![v(&[0.5, 0.0]), v(&[0.0, 0.25])]).unwrap();
        let term = |h: &[f64]| CurvatureTerm {
            hess_xx: DMatrix::zeros(2, 2),
            hess_tx: v(h),
            hess_tt: 0.0,
        };
        let curv = Curvature {
            terms: vec![term(&[1.0, -1.0]), term(&[-2.0, 2.0])],
        };
        let sol = solve_cone_qp(&cone, &y, &DMatrix::identity(2, 2), &v(&[-1.0, 0.0]), &curv).unwrap();
        assert_eq!(sol.pieces, 2);
        assert!(sol.x.amax() < 1e-7, "{:?}", sol.x);
        // With the pieces scaled by 1/4 the objective on x = (a, -a) is
        // a^2 - a + |a| / 4, minimized at a = 3/8.
        let curv = Curvature {
            terms: vec![term(&[0.25, -0.25]), term(&[-0.5, 0.5])],
        };
        let x = constrained_derivative_qp(&cone, &y, &DMatrix::identity(2, 2), &v(&[-1.0, 0.0]), &curv).unwrap();
        assert!((&x - v(&[0.375, -0.375])).amax() < 1e-7, "{x:?}");
    }
}
