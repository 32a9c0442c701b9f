//! Sensitivity of parameterized variational inequalities of the second kind.
//!
//! A problem couples a strongly monotone operator `A(t, .)`, a convex
//! function `f(t, .)` from a small catalog and a right-hand side path
//! `x(t)`. The crate solves the inequality at fixed `t`, derives `y'(0)`
//! from a semi-derivative of `A` and a second epi-derivative of `f`, and
//! checks the result against finite differences of the solution path.

pub mod epi;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod model;
pub mod prox;
pub mod sensitivity;
pub mod validation;

pub use error::{Error, Result};
pub use exec::Exec;
