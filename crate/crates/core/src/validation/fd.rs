use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::richardson::richardson;
use crate::model::problem::VIProblem;
use crate::prox::{solve_vi, SolverParams};

const SETTLE_TOL: f64 = 1e-3;

/// Forward steps `h / 2^k` for `k = 0..=levels`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FDSchedule {
    pub h: f64,
    pub levels: usize,
    pub exec: Exec,
}

impl Default for FDSchedule {
    fn default() -> Self {
        Self {
            h: 0.1,
            levels: 10,
            exec: Exec::default(),
        }
    }
}

impl FDSchedule {
    pub fn new(h: f64, levels: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("FD step must be positive, got {h}")));
        }
        if levels == 0 {
            return Err(Error::InvalidParameter("FD schedule needs at least two steps".into()));
        }
        Ok(Self {
            h,
            levels,
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn steps(&self) -> Vec<f64> {
        (0..=self.levels).map(|k| self.h / (1u64 << k) as f64).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FdEstimate {
    pub estimate: Vec<f64>,
    /// Error estimate from the extrapolation table.
    pub error: f64,
    pub steps: Vec<f64>,
    /// `(y(h) - y(0)) / h` for every step.
    pub quotients: Vec<Vec<f64>>,
}

impl FdEstimate {
    pub fn point(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.estimate)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.estimate.len();
        let mut header = vec!["h".to_string()];
        header.extend((0..n).map(|i| format!("q{i}")));
        w.write_record(&header).map_err(io_err)?;
        for (h, q) in self.steps.iter().zip(&self.quotients) {
            let mut rec = vec![h.to_string()];
            rec.extend(q.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::InvalidParameter(e.to_string()))
    }
}

pub(crate) fn io_err(e: csv::Error) -> Error {
    Error::InvalidParameter(format!("csv output failed: {e}"))
}

/// Extrapolated limit of `(y(h) - y(0)) / h` over the schedule. Steps past
/// the problem's parameter range are rejected.
pub fn finite_difference_derivative(p: &VIProblem, sp: &SolverParams, fd: &FDSchedule) -> Result<FdEstimate> {
    if fd.h > p.t_max() {
        return Err(Error::InvalidParameter(format!(
            "FD step {} exceeds the parameter range [0, {}]",
            fd.h,
            p.t_max()
        )));
    }
    let sp = SolverParams {
        tol: sp.tol.min(1e-13),
        ..*sp
    };
    let y0 = solve_vi(p, 0.0, &sp, None)?.point();
    let steps = fd.steps();
    let solved = fd.exec.map(&steps, |&h| solve_vi(p, h, &sp, Some(&y0)).map(|s| (s.point() - &y0) / h));
    let quotients = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let ex = richardson(&quotients);
    let scale = 1.0 + ex.estimate.amax();
    if !(ex.error <= SETTLE_TOL * scale) {
        return Err(Error::NoConvergence(format!(
            "extrapolation error {:e} after {} steps",
            ex.error,
            steps.len()
        )));
    }
    Ok(FdEstimate {
        estimate: ex.estimate.as_slice().to_vec(),
        error: ex.error,
        steps,
        quotients: quotients.iter().map(|q| q.as_slice().to_vec()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    use crate::model::function::ParamFunction;
    use crate::model::operator::ParamOperator;
    use crate::model::path::{ScalarPath, VectorPath};
    use crate::model::problem::build_problem;

    fn s(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn linear_path() {
        let f = ParamFunction::weighted_abs(ScalarPath::polynomial(&[1.0, 1.0]), ScalarPath::constant(0.0));
        let x = VectorPath::polynomial(vec![s(3.0), s(2.0)]).unwrap();
        let p = build_problem(ParamOperator::identity(1), f, x).unwrap();
        let e = finite_difference_derivative(&p, &SolverParams::default(), &FDSchedule::default()).unwrap();
        assert!((e.estimate[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn first_order_error_halves() {
        // y(t) = 1 / (1 + t).
        let a = ParamOperator::affine(DMatrix::identity(1, 1), Some(DMatrix::identity(1, 1)), None, None, 1.0);
        let p = build_problem(a, ParamFunction::zero(1), VectorPath::constant(s(1.0))).unwrap();
        let e = finite_difference_derivative(&p, &SolverParams::default(), &FDSchedule::default()).unwrap();
        assert!((e.estimate[0] + 1.0).abs() < 1e-7, "{:?}", e.estimate);
        let err: Vec<f64> = e.quotients.iter().map(|q| q[0] + 1.0).collect();
        for k in err.len() - 4..err.len() {
            let ratio = err[k] / err[k - 1];
            assert!((0.4..=0.6).contains(&ratio), "ratio {ratio} at level {k}");
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let a = ParamOperator::affine(DMatrix::identity(1, 1), Some(DMatrix::identity(1, 1)), None, None, 1.0);
        let p = build_problem(a, ParamFunction::zero(1), VectorPath::constant(s(1.0))).unwrap();
        let sp = SolverParams::default();
        let seq = finite_difference_derivative(&p, &sp, &FDSchedule::default().with_exec(Exec::Sequential)).unwrap();
        let par = finite_difference_derivative(&p, &sp, &FDSchedule::default().with_exec(Exec::Parallel)).unwrap();
        assert_eq!(seq.quotients, par.quotients);
    }

    #[test]
    fn step_beyond_range_is_rejected() {
        let p = build_problem(
            ParamOperator::identity(1),
            ParamFunction::zero(1),
            VectorPath::constant(s(1.0)).with_t_max(0.05),
        )
        .unwrap();
        assert!(matches!(
            finite_difference_derivative(&p, &SolverParams::default(), &FDSchedule::default()),
            Err(Error::InvalidParameter(_))
        ));
    }
}
