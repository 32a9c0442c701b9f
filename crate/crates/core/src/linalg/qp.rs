//! Dual active-set method for strictly convex quadratic programs
//!
//! `minimize 1/2 x'Hx + c'x` subject to `E x = e` and `G x <= g`.
//!
//! Follows Goldfarb and Idnani: start from the unconstrained minimizer and
//! add violated constraints one at a time while keeping dual feasibility.
//! An unsatisfiable constraint shows up as a step direction with no primal
//! component and no blocking multiplier, which certifies infeasibility.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QuadProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_rows: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_rows: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

/// Solution with multipliers in the convention
/// `Hx + c + E'y + G'z = 0`, `z >= 0`.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_mult: DVector<f64>,
    pub ineq_mult: DVector<f64>,
    pub iterations: usize,
}

impl QuadProgram {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            eq_rows: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_rows: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        }
    }

    pub fn with_eq(mut self, rows: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.eq_rows = rows;
        self.eq_rhs = rhs;
        self
    }

    pub fn with_ineq(mut self, rows: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.ineq_rows = rows;
        self.ineq_rhs = rhs;
        self
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Max of stationarity, primal and complementarity residuals.
    pub fn kkt_residual(&self, s: &QpSolution) -> f64 {
        let x = &s.x;
        let grad = &self.hessian * x
            + &self.linear
            + self.eq_rows.transpose() * &s.eq_mult
            + self.ineq_rows.transpose() * &s.ineq_mult;
        let mut r = grad.amax();
        if self.eq_rows.nrows() > 0 {
            r = r.max((&self.eq_rows * x - &self.eq_rhs).amax());
        }
        if self.ineq_rows.nrows() > 0 {
            let slack = &self.ineq_rhs - &self.ineq_rows * x;
            for i in 0..slack.len() {
                r = r.max((-slack[i]).max(0.0));
                r = r.max((s.ineq_mult[i] * slack[i]).abs());
                r = r.max((-s.ineq_mult[i]).max(0.0));
            }
        }
        r
    }

    fn check_dims(&self) -> Result<()> {
        let n = self.dim();
        let ok = self.hessian.nrows() == n
            && self.hessian.ncols() == n
            && self.eq_rows.ncols() == n
            && self.eq_rows.nrows() == self.eq_rhs.len()
            && self.ineq_rows.ncols() == n
            && self.ineq_rows.nrows() == self.ineq_rhs.len();
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch("quadratic program data".into()))
        }
    }
}

/// One constraint in `n'x >= b` form.
struct Row {
    normal: DVector<f64>,
    rhs: f64,
    equality: bool,
    // Sign applied to the caller's row to reach `>=` form.
    sign: f64,
}

pub fn solve_qp(qp: &QuadProgram) -> Result<QpSolution> {
    qp.check_dims()?;
    let n = qp.dim();
    let chol = qp
        .hessian
        .clone()
        .cholesky()
        .ok_or(Error::QpUnbounded)?;

    let mut rows: Vec<Row> = Vec::new();
    for i in 0..qp.eq_rows.nrows() {
        rows.push(Row {
            normal: qp.eq_rows.row(i).transpose(),
            rhs: qp.eq_rhs[i],
            equality: true,
            sign: 1.0,
        });
    }
    for i in 0..qp.ineq_rows.nrows() {
        rows.push(Row {
            normal: -qp.ineq_rows.row(i).transpose(),
            rhs: -qp.ineq_rhs[i],
            equality: false,
            sign: -1.0,
        });
    }

    let scale = 1.0 + qp.linear.amax() + qp.hessian.amax();
    let mut x = -chol.solve(&qp.linear);
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let max_iter = 50 * (n + rows.len()) + 100;
    let mut iterations = 0;

    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::MaxIterExceeded {
                max_iter,
                residual: f64::NAN,
            });
        }
        let tol = |r: &Row, x: &DVector<f64>| 1e-12 * (1.0 + r.rhs.abs() + r.normal.amax() * x.amax()) * scale;

        // Pick an equality first, then the most violated inequality.
        let mut pick: Option<usize> = None;
        for (i, r) in rows.iter().enumerate() {
            if r.equality && !active.contains(&i) {
                let s = r.normal.dot(&x) - r.rhs;
                if s.abs() > tol(r, &x) {
                    pick = Some(i);
                    break;
                }
            }
        }
        if pick.is_none() {
            let mut worst = 0.0;
            for (i, r) in rows.iter().enumerate() {
                if !r.equality && !active.contains(&i) {
                    let s = r.normal.dot(&x) - r.rhs;
                    if s < -tol(r, &x) && s < worst {
                        worst = s;
                        pick = Some(i);
                    }
                }
            }
        }
        let Some(p) = pick else { break };
        if rows[p].equality && rows[p].normal.dot(&x) - rows[p].rhs > 0.0 {
            let r = &mut rows[p];
            r.normal = -&r.normal;
            r.rhs = -r.rhs;
            r.sign = -r.sign;
        }

        let mut u_p = 0.0;
        loop {
            let np = rows[p].normal.clone();
            let (z, r) = step_direction(&qp.hessian, &rows, &active, &np)?;

            // Largest dual step keeping active inequality multipliers >= 0.
            let mut t1 = f64::INFINITY;
            let mut block: Option<usize> = None;
            for (k, &i) in active.iter().enumerate() {
                if !rows[i].equality && r[k] < 0.0 {
                    let tk = mult[k] / -r[k];
                    if tk < t1 {
                        t1 = tk;
                        block = Some(k);
                    }
                }
            }

            let z_norm = z.amax();
            if z_norm <= 1e-13 * (1.0 + np.amax()) {
                let Some(k) = block else {
                    return Err(Error::QpInfeasible);
                };
                for (j, m) in mult.iter_mut().enumerate() {
                    *m += t1 * r[j];
                }
                u_p += t1;
                active.remove(k);
                mult.remove(k);
                continue;
            }

            let s_p = np.dot(&x) - rows[p].rhs;
            let t2 = -s_p / np.dot(&z);
            let t = t1.min(t2);
            x += &z * t;
            for (j, m) in mult.iter_mut().enumerate() {
                *m += t * r[j];
            }
            u_p += t;
            if t2 <= t1 {
                active.push(p);
                mult.push(u_p);
                break;
            }
            let k = block.expect("t1 finite");
            active.remove(k);
            mult.remove(k);
        }
    }

    let mut eq_mult = DVector::zeros(qp.eq_rows.nrows());
    let mut ineq_mult = DVector::zeros(qp.ineq_rows.nrows());
    let n_eq = qp.eq_rows.nrows();
    for (k, &i) in active.iter().enumerate() {
        // H x + c = sum u_i n_i with n_i = sign * row_i.
        let value = -rows[i].sign * mult[k];
        if i < n_eq {
            eq_mult[i] = value;
        } else {
            ineq_mult[i - n_eq] = value.max(0.0);
        }
    }
    Ok(QpSolution {
        x,
        eq_mult,
        ineq_mult,
        iterations,
    })
}

/// Solves the KKT system for the primal step `z` and multiplier rates `r`:
/// `H z - N r = n_p`, `N' z = 0` with `N` the active normals.
fn step_direction(
    h: &DMatrix<f64>,
    rows: &[Row],
    active: &[usize],
    np: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = np.len();
    let m = active.len();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    for (k, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(j, n + k)] = -rows[i].normal[j];
            kkt[(n + k, j)] = rows[i].normal[j];
        }
    }
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(np);
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParameter("singular active set in QP".into()))?;
    let z = sol.rows(0, n).into_owned();
    let r = sol.rows(n, m).into_owned();
    Ok((z, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn projection(rows: &[f64], rhs: &[f64], x: &[f64]) -> QpSolution {
        let n = x.len();
        let qp = QuadProgram::new(DMatrix::identity(n, n), -v(x))
            .with_ineq(DMatrix::from_row_slice(rhs.len(), n, rows), v(rhs));
        let s = solve_qp(&qp).unwrap();
        assert!(qp.kkt_residual(&s) < 1e-10, "kkt {}", qp.kkt_residual(&s));
        s
    }

    #[test]
    fn halfspace_projection() {
        let s = projection(&[1.0, 1.0], &[1.0], &[1.0, 1.0]);
        assert!((s.x - v(&[0.5, 0.5])).amax() < 1e-14);
        assert!((s.ineq_mult[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn corner_and_box() {
        let s = projection(&[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0], &[0.0, 0.0, 1.0], &[2.0, 2.0]);
        assert!((s.x - v(&[0.5, 0.5])).amax() < 1e-14);
        let s = projection(&[-1.0, 0.0, 1.0, 0.0], &[0.0, 1.0], &[2.0, -1.0]);
        assert!((s.x - v(&[1.0, -1.0])).amax() < 1e-14);
    }

    #[test]
    fn equality_and_inequality() {
        // min 1/2|x|^2 - x1 - 2 x2 s.t. x1 + x2 = 1, x1 >= 0.6
        let qp = QuadProgram::new(DMatrix::identity(2, 2), v(&[-1.0, -2.0]))
            .with_eq(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[1.0]))
            .with_ineq(DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]), v(&[-0.6]));
        let s = solve_qp(&qp).unwrap();
        assert!((s.x.clone() - v(&[0.6, 0.4])).amax() < 1e-12);
        assert!(qp.kkt_residual(&s) < 1e-12);
    }

    #[test]
    fn infeasible_is_detected() {
        let qp = QuadProgram::new(DMatrix::identity(1, 1), v(&[0.0]))
            .with_ineq(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), v(&[-1.0, -1.0]));
        assert_eq!(solve_qp(&qp).unwrap_err(), Error::QpInfeasible);
        let qp = QuadProgram::new(DMatrix::identity(1, 1), v(&[0.0]))
            .with_eq(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]), v(&[1.0, 2.0]));
        assert_eq!(solve_qp(&qp).unwrap_err(), Error::QpInfeasible);
    }

    #[test]
    fn degenerate_redundant_rows() {
        let s = projection(&[1.0, 1.0, 2.0, 2.0, 1.0, 0.0], &[1.0, 2.0, 0.5], &[1.0, 1.0]);
        assert!((s.x - v(&[0.5, 0.5])).amax() < 1e-12);
    }
}
