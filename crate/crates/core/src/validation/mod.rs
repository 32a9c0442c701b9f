//! Independent oracles: finite differences of the solution path,
//! subdifferential consistency of second-order quotients and the
//! Fenchel-Young gap of weighted absolute values.

pub mod fd;
pub mod phi;
pub mod subdiff;
pub mod verify;

pub use fd::{finite_difference_derivative, FDSchedule, FdEstimate};
pub use phi::{conjugate, conjugate_d2e, conjugate_identity, phi, phi_gap, ConjugateIdentityReport, PhiReport};
pub use subdiff::{subdiff_consistency, subdifferential_1d, SubdiffReport, SubdiffRow};
pub use verify::{verify_theorem, VerifyReport, VerifyStatus};

use crate::sensitivity::SensitivityReport;

/// Records the distance between the engine derivative and a
/// finite-difference estimate in the report.
pub fn record_crosscheck(report: &mut SensitivityReport, fd: &FdEstimate) -> f64 {
    let gap = (report.yprime() - fd.point()).amax();
    report.residuals.fd_crosscheck = Some(gap);
    gap
}
