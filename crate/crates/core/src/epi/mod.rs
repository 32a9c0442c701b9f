//! Difference quotients, numeric epi-limit probes, supporting hyperplane
//! probes and closed-form second epi-derivatives.

pub mod cone;
pub mod csh;
pub mod probe;
pub mod quotient;
pub mod second_order;

pub use cone::{cone_k, polytope_y, support_y, PolyCone, Polytope};
pub use csh::{csh_probe, CshReport, CshStatus};
pub use probe::{epi_limit_probe, epi_limit_probe_many, EpiClass, EpiProbeEntry, EpiProbeReport, TauSchedule};
pub use quotient::{delta2_quotient, delta_op_quotient};
pub use second_order::{
    d2e_closed_form, derive_second_order, Curvature, CurvatureTerm, DerivedSecondOrder, SecondOrderConfig,
    SecondOrderOutcome,
};
