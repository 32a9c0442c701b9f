use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::qp::{solve_qp, QuadProgram};
use crate::model::function::ConstraintSet;
use crate::model::interval::Interval;

const MAX_ACTIVE: usize = 10;

/// Relative slack for deciding that a constraint value is zero.
pub fn active_tol(y: &DVector<f64>) -> f64 {
    1e-8 * (1.0 + y.amax())
}

/// `{x : E x = 0, G x <= 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyCone {
    pub eq: DMatrix<f64>,
    pub ineq: DMatrix<f64>,
}

impl PolyCone {
    pub fn new(eq: DMatrix<f64>, ineq: DMatrix<f64>) -> Self {
        Self { eq, ineq }
    }

    pub fn whole_space(n: usize) -> Self {
        Self::new(DMatrix::zeros(0, n), DMatrix::zeros(0, n))
    }

    /// `{w >= 0}` in one dimension.
    pub fn nonnegative_line() -> Self {
        Self::new(DMatrix::zeros(0, 1), DMatrix::from_element(1, 1, -1.0))
    }

    /// `{w <= 0}` in one dimension.
    pub fn nonpositive_line() -> Self {
        Self::new(DMatrix::zeros(0, 1), DMatrix::from_element(1, 1, 1.0))
    }

    pub fn dim(&self) -> usize {
        self.eq.ncols()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        let eq_ok = (0..self.eq.nrows()).all(|i| self.eq.row(i).dot(&x.transpose()).abs() <= tol * (1.0 + self.eq.row(i).amax()));
        let in_ok = (0..self.ineq.nrows()).all(|i| self.ineq.row(i).dot(&x.transpose()) <= tol * (1.0 + self.ineq.row(i).amax()));
        eq_ok && in_ok
    }

    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        crate::prox::project_polyhedron_eq(
            &self.eq,
            &DVector::zeros(self.eq.nrows()),
            &self.ineq,
            &DVector::zeros(self.ineq.nrows()),
            x,
        )
    }

    /// The cone as an interval when the ambient space is the line.
    pub fn interval(&self) -> Interval {
        debug_assert_eq!(self.dim(), 1);
        let mut iv = Interval::real_line();
        for i in 0..self.eq.nrows() {
            if self.eq[(i, 0)] != 0.0 {
                iv = iv.intersect(&Interval::point(0.0));
            }
        }
        for i in 0..self.ineq.nrows() {
            let g = self.ineq[(i, 0)];
            if g > 0.0 {
                iv = iv.intersect(&Interval::new(f64::NEG_INFINITY, 0.0));
            } else if g < 0.0 {
                iv = iv.intersect(&Interval::new(0.0, f64::INFINITY));
            }
        }
        iv
    }

    pub fn summary(&self) -> ConeSummary {
        ConeSummary {
            eq: rows_of(&self.eq),
            ineq: rows_of(&self.ineq),
        }
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeSummary {
    pub eq: Vec<Vec<f64>>,
    pub ineq: Vec<Vec<f64>>,
}

/// A bounded polytope given by its vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub vertices: Vec<DVector<f64>>,
}

impl Polytope {
    pub fn new(vertices: Vec<DVector<f64>>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::EmptyY);
        }
        if vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidParameter("polytope vertex is not finite".into()));
        }
        Ok(Self { vertices })
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn summary(&self) -> Vec<Vec<f64>> {
        self.vertices.iter().map(|v| v.as_slice().to_vec()).collect()
    }
}

/// `max over the vertices of <w, q>`.
pub fn support_y(y: &Polytope, q: &DVector<f64>) -> f64 {
    y.vertices
        .iter()
        .map(|w| w.dot(q))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn active_set(f: &ConstraintSet, y: &DVector<f64>) -> Result<Vec<usize>> {
    let tol = active_tol(y);
    let mut active = Vec::new();
    for (i, row) in f.rows().iter().enumerate() {
        let val = row.value(0.0, y);
        if val > tol {
            return Err(Error::InfeasiblePoint(format!("constraint {i} has value {val:e} > 0")));
        }
        if val >= -tol {
            active.push(i);
        }
    }
    Ok(active)
}

/// Critical cone `{grad F_i(0, y) x <= 0 on active rows, <x, v> = 0}`.
/// With `v = sum u_i grad F_i`, the equation splits into `grad F_i x = 0`
/// for every row carrying a positive multiplier. Those rows are used in
/// place of `v`, which only matches them up to solver round-off and would
/// otherwise sit at a tiny angle to an inequality row.
pub fn cone_k(f: &ConstraintSet, y: &DVector<f64>, v: &DVector<f64>) -> Result<PolyCone> {
    let n = f.dim();
    if y.len() != n || v.len() != n {
        return Err(Error::DimensionMismatch("cone point or vector".into()));
    }
    let active = active_set(f, y)?;
    let grads: Vec<DVector<f64>> = active.iter().map(|&i| f.rows()[i].grad_x(0.0, y)).collect();
    let rows = |pick: &[usize]| {
        DMatrix::from_fn(pick.len(), n, |r, c| grads[pick[r]][c])
    };
    let all: Vec<usize> = (0..active.len()).collect();
    let Ok(y_set) = polytope_y(f, y, v) else {
        return Ok(PolyCone::new(DMatrix::from_row_slice(1, n, v.as_slice()), rows(&all)));
    };
    let scale = y_set.vertices.iter().map(|u| u.amax()).fold(0.0, f64::max);
    let carries = |k: usize| y_set.vertices.iter().any(|u| u[active[k]] > 1e-8 * (1.0 + scale));
    let (eq, ineq): (Vec<usize>, Vec<usize>) = all.into_iter().partition(|&k| carries(k));
    Ok(PolyCone::new(rows(&eq), rows(&ineq)))
}

/// Basic nonnegative solutions of `m w = rhs`: one per column subset with
/// independent columns.
fn basic_solutions(m: &DMatrix<f64>, rhs: &DVector<f64>, tol: f64) -> Vec<DVector<f64>> {
    let k = m.ncols();
    let rank_cap = m.nrows().min(k);
    let mut out: Vec<DVector<f64>> = Vec::new();
    for mask in 0u32..(1u32 << k) {
        let set: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() > rank_cap {
            continue;
        }
        let mut w = DVector::zeros(k);
        if set.is_empty() {
            if rhs.amax() > tol {
                continue;
            }
        } else {
            let sub = DMatrix::from_fn(m.nrows(), set.len(), |i, j| m[(i, set[j])]);
            let svd = sub.clone().svd(true, true);
            let smax = svd.singular_values.max();
            if svd.rank(1e-10 * smax.max(1e-300)) < set.len() {
                continue;
            }
            let Ok(sol) = svd.solve(rhs, 1e-12 * smax) else {
                continue;
            };
            if (&sub * &sol - rhs).amax() > tol || sol.iter().any(|&s| s < -tol) {
                continue;
            }
            for (j, &i) in set.iter().enumerate() {
                w[i] = sol[j].max(0.0);
            }
        }
        if !out.iter().any(|o| (o - &w).amax() <= tol) {
            out.push(w);
        }
    }
    out
}

/// Multiplier polytope `{w >= 0 on active rows, 0 elsewhere : J' w = v}`,
/// returned as vertices in the full constraint space.
pub fn polytope_y(f: &ConstraintSet, y: &DVector<f64>, v: &DVector<f64>) -> Result<Polytope> {
    let n = f.dim();
    if y.len() != n || v.len() != n {
        return Err(Error::DimensionMismatch("multiplier point or vector".into()));
    }
    let active = active_set(f, y)?;
    if active.len() > MAX_ACTIVE {
        return Err(Error::InvalidParameter(format!(
            "{} active constraints exceed the vertex enumeration limit of {MAX_ACTIVE}",
            active.len()
        )));
    }
    let mut cols = DMatrix::zeros(n, active.len());
    for (k, &i) in active.iter().enumerate() {
        cols.set_column(k, &f.rows()[i].grad_x(0.0, y));
    }
    let tol = 1e-8 * (1.0 + v.amax() + cols.amax());
    let basic = basic_solutions(&cols, v, tol);
    if basic.is_empty() {
        return Err(Error::EmptyY);
    }
    // Recession directions: u >= 0, cols u = 0, sum u = 1.
    if !active.is_empty() {
        let mut aug = DMatrix::zeros(n + 1, active.len());
        aug.view_mut((0, 0), (n, active.len())).copy_from(&cols);
        aug.row_mut(n).fill(1.0);
        let mut rhs = DVector::zeros(n + 1);
        rhs[n] = 1.0;
        if !basic_solutions(&aug, &rhs, 1e-10 * (1.0 + cols.amax())).is_empty() {
            return Err(Error::UnboundedY);
        }
    }
    let vertices = basic
        .into_iter()
        .map(|w| {
            let mut full = DVector::zeros(f.len());
            for (k, &i) in active.iter().enumerate() {
                full[i] = w[k];
            }
            full
        })
        .collect();
    Polytope::new(vertices)
}

/// `min over the simplex of |m' w|`, the constant in the surjectivity bound.
pub fn simplex_min_norm(m: &DMatrix<f64>) -> Result<f64> {
    let k = m.nrows();
    if k == 0 {
        return Ok(f64::INFINITY);
    }
    let gram = m * m.transpose() + DMatrix::identity(k, k) * 1e-14;
    let qp = QuadProgram::new(gram, DVector::zeros(k))
        .with_eq(DMatrix::from_element(1, k, 1.0), DVector::from_element(1, 1.0))
        .with_ineq(-DMatrix::identity(k, k), DVector::zeros(k));
    let sol = solve_qp(&qp)?;
    Ok((m.transpose() * sol.x).norm())
}
