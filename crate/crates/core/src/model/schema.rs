//! JSON problem files.
//!
//! ```json
//! {
//!   "operator": {"kind": "identity", "dim": 1},
//!   "function": {"kind": "weighted_abs", "a": {"c0": 1.0, "c1": 1.0}, "b": {"c0": 0.0}},
//!   "path": {"kind": "poly", "c0": [3.0], "c1": [2.0]}
//! }
//! ```

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::error::Error;
use crate::model::function::{Constraint, ConstraintSet, ParamFunction, SmoothFn};
use crate::model::operator::ParamOperator;
use crate::model::path::{ScalarPath, VectorPath, DEFAULT_T_MAX};
use crate::model::problem::{build_problem_with, AuditConfig, VIProblem};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{0}")]
    Problem(#[from] Error),
}

impl LoadError {
    fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        LoadError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn path(&self) -> Option<&str> {
        match self {
            LoadError::Parse { path, .. } | LoadError::Invalid { path, .. } => Some(path),
            LoadError::Problem(_) => None,
        }
    }

    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        LoadError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }
}

type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    pub operator: OperatorSpec,
    pub function: FunctionSpec,
    pub path: PathSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorSpec {
    Identity(IdentitySpec),
    Affine(AffineOperatorSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitySpec {
    pub dim: usize,
}

/// `(matrix + t matrix_t) y + shift + t shift_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineOperatorSpec {
    pub matrix: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_t: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_t: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strong_mono: Option<f64>,
}

/// Scalar polynomial `c0 + c1 t + c2 t^2 + c3 t^3`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolySpec {
    #[serde(default)]
    pub c0: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c2: f64,
    #[serde(default)]
    pub c3: f64,
}

impl PolySpec {
    pub fn to_path(self, t_max: f64) -> ScalarPath {
        ScalarPath::polynomial(&[self.c0, self.c1, self.c2, self.c3]).with_t_max(t_max)
    }
}

/// `F(t, x) = 1/2 x'hess x + (grad + t grad_t)'x + c0 + c1 t + c2 t^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hess: Option<Matrix>,
    pub grad: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_t: Option<Vec<f64>>,
    #[serde(default)]
    pub c0: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    Smooth(SmoothSpec),
    WeightedAbs(WeightedAbsSpec),
    ConstraintIndicator(ConstraintIndicatorSpec),
    /// Parsed so the error can name it; custom functions need an
    /// in-process prox oracle.
    Custom(CustomSpec),
}

/// `1/2 x'(hess + t hess_t)x + (lin + t lin_t)'x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothSpec {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hess: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hess_t: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lin_t: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedAbsSpec {
    pub a: PolySpec,
    pub b: PolySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintIndicatorSpec {
    pub constraints: Vec<ConstraintSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathSpec {
    Poly(PolyPathSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyPathSpec {
    pub c0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    t_max: Option<f64>,
    operator: Value,
    function: Value,
    path: Value,
}

/// Parses a problem file. Errors name the JSON path of the offending key.
pub fn parse_problem(json: &str) -> Result<ProblemSpec, LoadError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let raw: RawProblem = serde_path_to_error::deserialize(de).map_err(|e| LoadError::Parse {
        path: display_path(&e.path().to_string()),
        message: e.into_inner().to_string(),
    })?;
    let operator = match kind(&raw.operator, "operator")?.as_str() {
        "identity" => OperatorSpec::Identity(section(&raw.operator, "operator")?),
        "affine" => OperatorSpec::Affine(section(&raw.operator, "operator")?),
        other => return Err(unknown_kind("operator", other, "identity, affine")),
    };
    let function = match kind(&raw.function, "function")?.as_str() {
        "smooth" => FunctionSpec::Smooth(section(&raw.function, "function")?),
        "weighted_abs" => FunctionSpec::WeightedAbs(section(&raw.function, "function")?),
        "constraint_indicator" => FunctionSpec::ConstraintIndicator(section(&raw.function, "function")?),
        "custom" => FunctionSpec::Custom(section(&raw.function, "function")?),
        other => {
            return Err(unknown_kind(
                "function",
                other,
                "smooth, weighted_abs, constraint_indicator, custom",
            ))
        }
    };
    let path = match kind(&raw.path, "path")?.as_str() {
        "poly" => PathSpec::Poly(section(&raw.path, "path")?),
        other => return Err(unknown_kind("path", other, "poly")),
    };
    Ok(ProblemSpec {
        name: raw.name,
        description: raw.description,
        t_max: raw.t_max,
        operator,
        function,
        path,
    })
}

fn kind(v: &Value, path: &str) -> Result<String, LoadError> {
    let obj = v
        .as_object()
        .ok_or_else(|| LoadError::parse(path, "expected an object"))?;
    obj.get("kind")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LoadError::parse(format!("{path}.kind"), "missing string discriminator"))
}

fn unknown_kind(path: &str, got: &str, expected: &str) -> LoadError {
    LoadError::parse(format!("{path}.kind"), format!("unknown kind `{got}`, expected one of {expected}"))
}

fn section<T: DeserializeOwned>(v: &Value, path: &str) -> Result<T, LoadError> {
    let mut obj = v.as_object().cloned().unwrap_or_default();
    obj.remove("kind");
    serde_path_to_error::deserialize(Value::Object(obj)).map_err(|e| {
        let inner = e.path().to_string();
        let full = if inner.is_empty() || inner == "." {
            path.to_string()
        } else {
            format!("{path}.{inner}")
        };
        LoadError::Parse {
            path: full,
            message: e.into_inner().to_string(),
        }
    })
}

fn display_path(p: &str) -> String {
    if p.is_empty() || p == "." {
        "<root>".to_string()
    } else {
        p.to_string()
    }
}

fn matrix(m: &Matrix, n: usize, path: &str) -> Result<DMatrix<f64>, LoadError> {
    if m.len() != n {
        return Err(LoadError::invalid(path, format!("expected {n} rows, got {}", m.len())));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != n {
            return Err(LoadError::invalid(
                format!("{path}[{i}]"),
                format!("expected {n} columns, got {}", row.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| m[i][j]))
}

fn vector(v: &[f64], n: usize, path: &str) -> Result<DVector<f64>, LoadError> {
    if v.len() != n {
        return Err(LoadError::invalid(path, format!("expected length {n}, got {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn opt_matrix(m: &Option<Matrix>, n: usize, path: &str) -> Result<Option<DMatrix<f64>>, LoadError> {
    m.as_ref().map(|m| matrix(m, n, path)).transpose()
}

fn opt_vector(v: &Option<Vec<f64>>, n: usize, path: &str) -> Result<Option<DVector<f64>>, LoadError> {
    v.as_ref().map(|v| vector(v, n, path)).transpose()
}

impl ProblemSpec {
    pub fn from_json(json: &str) -> Result<Self, LoadError> {
        parse_problem(json)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem spec serializes")
    }

    pub fn dim(&self) -> usize {
        match &self.path {
            PathSpec::Poly(p) => p.c0.len(),
        }
    }

    pub fn build(&self) -> Result<VIProblem, LoadError> {
        self.build_with(&AuditConfig::default())
    }

    pub fn build_with(&self, audit: &AuditConfig) -> Result<VIProblem, LoadError> {
        let t_max = self.t_max.unwrap_or(DEFAULT_T_MAX);
        if !(t_max > 0.0) {
            return Err(LoadError::invalid("t_max", "must be positive"));
        }
        let n = self.dim();
        if n == 0 {
            return Err(LoadError::invalid("path.c0", "dimension must be at least 1"));
        }
        let path = self.path_value(n, t_max)?;
        let operator = self.operator_value(n, t_max)?;
        let function = self.function_value(n, t_max)?;
        Ok(build_problem_with(operator, function, path, audit)?)
    }

    fn path_value(&self, n: usize, t_max: f64) -> Result<VectorPath, LoadError> {
        let PathSpec::Poly(PolyPathSpec { c0, c1, c2 }) = &self.path;
        let mut coeffs = vec![vector(c0, n, "path.c0")?];
        let c1 = opt_vector(c1, n, "path.c1")?;
        let c2 = opt_vector(c2, n, "path.c2")?;
        if c1.is_some() || c2.is_some() {
            coeffs.push(c1.unwrap_or_else(|| DVector::zeros(n)));
        }
        if let Some(c2) = c2 {
            coeffs.push(c2);
        }
        Ok(VectorPath::polynomial(coeffs)?.with_t_max(t_max))
    }

    fn operator_value(&self, n: usize, t_max: f64) -> Result<ParamOperator, LoadError> {
        match &self.operator {
            OperatorSpec::Identity(IdentitySpec { dim }) => {
                if *dim != n {
                    return Err(LoadError::invalid(
                        "operator.dim",
                        format!("operator dimension {dim} does not match path dimension {n}"),
                    ));
                }
                Ok(ParamOperator::identity(n))
            }
            OperatorSpec::Affine(AffineOperatorSpec {
                matrix: m,
                matrix_t,
                shift,
                shift_t,
                lipschitz,
                strong_mono,
            }) => {
                let m0 = matrix(m, n, "operator.matrix")?;
                let m1 = opt_matrix(matrix_t, n, "operator.matrix_t")?;
                let r0 = opt_vector(shift, n, "operator.shift")?;
                let r1 = opt_vector(shift_t, n, "operator.shift_t")?;
                let op = ParamOperator::affine(m0, m1, r0, r1, t_max);
                let l = lipschitz.unwrap_or(op.lipschitz());
                let a = strong_mono.unwrap_or(op.strong_mono());
                Ok(op.with_constants(l, a))
            }
        }
    }

    fn function_value(&self, n: usize, t_max: f64) -> Result<ParamFunction, LoadError> {
        match &self.function {
            FunctionSpec::Smooth(SmoothSpec {
                dim,
                hess,
                hess_t,
                lin,
                lin_t,
            }) => {
                if *dim != n {
                    return Err(LoadError::invalid(
                        "function.dim",
                        format!("function dimension {dim} does not match path dimension {n}"),
                    ));
                }
                let h0 = opt_matrix(hess, n, "function.hess")?.unwrap_or_else(|| DMatrix::zeros(n, n));
                let h1 = opt_matrix(hess_t, n, "function.hess_t")?;
                let l0 = opt_vector(lin, n, "function.lin")?;
                let l1 = opt_vector(lin_t, n, "function.lin_t")?;
                Ok(ParamFunction::Smooth(SmoothFn::quadratic(h0, h1, l0, l1)))
            }
            FunctionSpec::WeightedAbs(WeightedAbsSpec { a, b }) => {
                if n != 1 {
                    return Err(LoadError::invalid(
                        "function.kind",
                        format!("weighted_abs is one-dimensional but the path has dimension {n}"),
                    ));
                }
                Ok(ParamFunction::weighted_abs(a.to_path(t_max), b.to_path(t_max)))
            }
            FunctionSpec::ConstraintIndicator(ConstraintIndicatorSpec { constraints }) => {
                if constraints.is_empty() {
                    return Err(LoadError::invalid("function.constraints", "at least one constraint is required"));
                }
                let mut rows = Vec::with_capacity(constraints.len());
                for (i, c) in constraints.iter().enumerate() {
                    let base = format!("function.constraints[{i}]");
                    let p = opt_matrix(&c.hess, n, &format!("{base}.hess"))?;
                    let g0 = vector(&c.grad, n, &format!("{base}.grad"))?;
                    let g1 = opt_vector(&c.grad_t, n, &format!("{base}.grad_t"))?;
                    if let Some(p) = &p {
                        if (p - p.transpose()).amax() > 0.0 || crate::linalg::min_sym_eigenvalue(p) < -1e-12 {
                            return Err(LoadError::invalid(
                                format!("{base}.hess"),
                                "constraint Hessian must be symmetric positive semidefinite",
                            ));
                        }
                    }
                    rows.push(Constraint::quadratic(p, g0, g1, [c.c0, c.c1, c.c2]));
                }
                Ok(ParamFunction::ConstraintIndicator(ConstraintSet::new(n, rows)))
            }
            FunctionSpec::Custom(_) => Err(LoadError::invalid(
                "function.kind",
                "custom functions need an in-process prox oracle and cannot be loaded from JSON",
            )),
        }
    }
}
