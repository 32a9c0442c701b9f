use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// One named hypothesis check, as reported by the sensitivity engine.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HypothesisCheck {
    pub clause: String,
    pub holds: bool,
    pub detail: String,
    pub sampled_only: bool,
}

impl HypothesisCheck {
    pub fn new(clause: impl Into<String>, holds: bool, detail: impl Into<String>) -> Self {
        Self {
            clause: clause.into(),
            holds,
            detail: detail.into(),
            sampled_only: false,
        }
    }

    pub fn sampled(mut self) -> Self {
        self.sampled_only = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("audit failed: {0}")]
    AuditFailed(String),
    #[error("custom function has no prox oracle")]
    MissingProxOracle,
    #[error("indeterminate extended-real operation: {0}")]
    Indeterminate(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("path derivative check failed: {0}")]
    PathDerivative(String),
    #[error("prox subproblem diverged: {0}")]
    SubproblemDiverged(String),
    #[error("prox oracle inconsistent: {0}")]
    OracleInconsistent(String),
    #[error("constraint set is infeasible")]
    InfeasibleSet,
    #[error("no convergence after {max_iter} iterations (last residual {residual:e})")]
    MaxIterExceeded { max_iter: usize, residual: f64 },
    #[error("point is outside the domain of f")]
    XNotInDomain,
    #[error("probe supports dimension 1 or 2, got {0}")]
    DimensionTooLarge(usize),
    #[error("unsupported function variant: {0}")]
    UnsupportedVariant(String),
    #[error("hypothesis violated: {}", first_failed(.0))]
    HypothesisViolated(Vec<HypothesisCheck>),
    #[error("v is not a subgradient: {0}")]
    SubgradientInvalid(String),
    #[error("point is infeasible: {0}")]
    InfeasiblePoint(String),
    #[error("multiplier set is empty")]
    EmptyY,
    #[error("multiplier set is unbounded")]
    UnboundedY,
    #[error("quadratic program is infeasible")]
    QpInfeasible,
    #[error("quadratic program is unbounded or not strictly convex")]
    QpUnbounded,
    #[error("operator is not semi-differentiable: {0}")]
    NotSemidifferentiable(String),
    #[error("finite differences did not converge: {0}")]
    NoConvergence(String),
    #[error("conjugate is infinite at t = {0}")]
    ConjugateInfinite(f64),
    #[error("derivative residual check failed: {0}")]
    ResidualCheck(String),
}

fn first_failed(checks: &[HypothesisCheck]) -> String {
    checks
        .iter()
        .filter(|c| !c.holds)
        .map(|c| format!("{} ({})", c.clause, c.detail))
        .collect::<Vec<_>>()
        .join("; ")
}
