use std::io::Write;

use serde::Serialize;

use crate::error::{Error, HypothesisCheck};
use crate::model::problem::VIProblem;
use crate::prox::SolverParams;
use crate::sensitivity::solve_sensitivity;
use crate::validation::fd::{finite_difference_derivative, io_err, FDSchedule, FdEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerifyStatus {
    Pass,
    Mismatch,
    HypothesisViolated,
}

impl VerifyStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            VerifyStatus::Pass => "PASS",
            VerifyStatus::Mismatch => "MISMATCH",
            VerifyStatus::HypothesisViolated => "HYPOTHESIS_VIOLATED",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub status: VerifyStatus,
    pub engine_yprime: Option<Vec<f64>>,
    pub fd: Option<FdEstimate>,
    /// `"oracle-only"` when the finite-difference value is not backed by
    /// the engine.
    pub fd_label: Option<&'static str>,
    pub difference: Option<f64>,
    pub tol: f64,
    pub hypotheses: Vec<HypothesisCheck>,
    pub message: Option<String>,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per component.
    pub fn write_csv<W: Write>(&self, out: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["status", "component", "engine", "fd", "fd_error", "fd_label"])
            .map_err(io_err)?;
        let n = self
            .engine_yprime
            .as_ref()
            .map(Vec::len)
            .or(self.fd.as_ref().map(|f| f.estimate.len()))
            .unwrap_or(0);
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for i in 0..n {
            w.write_record([
                self.status.as_str().to_string(),
                i.to_string(),
                cell(self.engine_yprime.as_ref().map(|e| e[i])),
                cell(self.fd.as_ref().map(|f| f.estimate[i])),
                cell(self.fd.as_ref().map(|f| f.error)),
                self.fd_label.unwrap_or("").to_string(),
            ])
            .map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::InvalidParameter(e.to_string()))
    }
}

/// Compares the engine derivative with the finite-difference oracle. The
/// oracle always runs, so a refused instance still reports its estimate.
pub fn verify_theorem(p: &VIProblem, sp: &SolverParams, fd: &FDSchedule, tol: f64) -> VerifyReport {
    let oracle = finite_difference_derivative(p, sp, fd);
    let engine = solve_sensitivity(p, sp);
    let (fd_est, fd_msg) = match oracle {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(format!("finite differences: {e}"))),
    };
    match engine {
        Err(Error::HypothesisViolated(checks)) => VerifyReport {
            status: VerifyStatus::HypothesisViolated,
            engine_yprime: None,
            fd_label: fd_est.as_ref().map(|_| "oracle-only"),
            fd: fd_est,
            difference: None,
            tol,
            hypotheses: checks,
            message: fd_msg,
        },
        Err(e) => VerifyReport {
            status: VerifyStatus::Mismatch,
            engine_yprime: None,
            fd_label: fd_est.as_ref().map(|_| "oracle-only"),
            fd: fd_est,
            difference: None,
            tol,
            hypotheses: Vec::new(),
            message: Some(format!("engine: {e}")),
        },
        Ok(report) => {
            let (status, difference) = match &fd_est {
                Some(f) => {
                    let diff = (report.yprime() - f.point()).amax();
                    let ok = diff <= tol + f.error;
                    (if ok { VerifyStatus::Pass } else { VerifyStatus::Mismatch }, Some(diff))
                }
                None => (VerifyStatus::Mismatch, None),
            };
            VerifyReport {
                status,
                engine_yprime: Some(report.yprime.clone()),
                fd: fd_est,
                fd_label: None,
                difference,
                tol,
                hypotheses: report.hypotheses,
                message: fd_msg,
            }
        }
    }
}
