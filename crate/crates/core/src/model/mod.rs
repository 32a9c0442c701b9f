//! Problem data: extended reals, paths, operators, functions and the
//! JSON problem schema.

pub mod extreal;
pub mod function;
pub mod interval;
pub mod operator;
pub mod path;
pub mod problem;
pub mod schema;

pub use extreal::ExtReal;
pub use function::{Constraint, ConstraintSet, CustomFn, ParamFunction, SmoothFn, WeightedAbs};
pub use interval::Interval;
pub use operator::ParamOperator;
pub use path::{ScalarPath, VectorPath};
pub use problem::{build_problem, build_problem_with, AuditConfig, VIProblem};
