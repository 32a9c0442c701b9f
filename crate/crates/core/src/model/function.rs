use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::model::extreal::ExtReal;
use crate::model::interval::Interval;
use crate::model::operator::{FieldFn, MatrixFn};
use crate::model::path::ScalarPath;

pub type ValueFn = Arc<dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync>;
pub type ExtValueFn = Arc<dyn Fn(f64, &DVector<f64>) -> ExtReal + Send + Sync>;
pub type ProxOracle = Arc<dyn Fn(f64, &DVector<f64>, f64) -> DVector<f64> + Send + Sync>;

/// Slack used when deciding membership of numerically computed points.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// A `C^2` function `g(t, x)` with its derivatives.
#[derive(Clone)]
pub struct SmoothFn {
    dim: usize,
    value: ValueFn,
    grad_x: FieldFn,
    hess_xx: MatrixFn,
    hess_tx: FieldFn,
}

impl SmoothFn {
    pub fn new(
        dim: usize,
        value: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
        grad_x: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        hess_xx: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        hess_tx: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            grad_x: Arc::new(grad_x),
            hess_xx: Arc::new(hess_xx),
            hess_tx: Arc::new(hess_tx),
        }
    }

    /// `g(t, x) = 1/2 x'(h0 + t h1)x + (l0 + t l1)'x`.
    pub fn quadratic(
        h0: DMatrix<f64>,
        h1: Option<DMatrix<f64>>,
        l0: Option<DVector<f64>>,
        l1: Option<DVector<f64>>,
    ) -> Self {
        let n = h0.nrows();
        let h1 = h1.unwrap_or_else(|| DMatrix::zeros(n, n));
        let l0 = l0.unwrap_or_else(|| DVector::zeros(n));
        let l1 = l1.unwrap_or_else(|| DVector::zeros(n));
        let (h0a, h1a, l0a, l1a) = (h0.clone(), h1.clone(), l0.clone(), l1.clone());
        let (h0b, h1b, l0b, l1b) = (h0.clone(), h1.clone(), l0, l1.clone());
        let (h1c, l1c) = (h1.clone(), l1);
        Self::new(
            n,
            move |t, x| {
                let h = &h0a + &h1a * t;
                0.5 * x.dot(&(&h * x)) + (&l0a + &l1a * t).dot(x)
            },
            move |t, x| (&h0b + &h1b * t) * x + &l0b + &l1b * t,
            move |t, _| &h0 + &h1 * t,
            move |_, x| &h1c * x + &l1c,
        )
    }

    pub fn zero(dim: usize) -> Self {
        Self::quadratic(DMatrix::zeros(dim, dim), None, None, None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, t: f64, x: &DVector<f64>) -> f64 {
        (self.value)(t, x)
    }

    pub fn grad_x(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.grad_x)(t, x)
    }

    pub fn hess_xx(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        (self.hess_xx)(t, x)
    }

    pub fn hess_tx(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.hess_tx)(t, x)
    }
}

/// `a(t) |x - b(t)|` on the real line, with `a(t) > 0`.
#[derive(Clone, Debug)]
pub struct WeightedAbs {
    pub a: ScalarPath,
    pub b: ScalarPath,
}

impl WeightedAbs {
    pub fn new(a: ScalarPath, b: ScalarPath) -> Self {
        Self { a, b }
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.a.eval(t) * (x - self.b.eval(t)).abs()
    }

    /// Subdifferential at `x`; points within `kink_tol` of `b(t)` count as
    /// the kink.
    pub fn subdifferential(&self, t: f64, x: f64, kink_tol: f64) -> Interval {
        let a = self.a.eval(t);
        let b = self.b.eval(t);
        if (x - b).abs() <= kink_tol {
            Interval::new(-a, a)
        } else if x > b {
            Interval::point(a)
        } else {
            Interval::point(-a)
        }
    }
}

/// One convex component `F_i(t, x)` of a constraint map, with the
/// derivatives needed for projections and second-order terms.
#[derive(Clone)]
pub struct Constraint {
    value: ValueFn,
    grad_x: FieldFn,
    grad_t: ValueFn,
    hess_xx: MatrixFn,
    hess_tx: FieldFn,
    hess_tt: ValueFn,
    affine_in_x: bool,
    quadratic_in_x: bool,
}

impl Constraint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        value: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
        grad_x: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        grad_t: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
        hess_xx: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        hess_tx: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        hess_tt: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
        affine_in_x: bool,
    ) -> Self {
        Self {
            value: Arc::new(value),
            grad_x: Arc::new(grad_x),
            grad_t: Arc::new(grad_t),
            hess_xx: Arc::new(hess_xx),
            hess_tx: Arc::new(hess_tx),
            hess_tt: Arc::new(hess_tt),
            affine_in_x,
            quadratic_in_x: affine_in_x,
        }
    }

    /// `F(t, x) = 1/2 x'Px + (g0 + t g1)'x + c[0] + c[1] t + c[2] t^2`.
    pub fn quadratic(
        p: Option<DMatrix<f64>>,
        g0: DVector<f64>,
        g1: Option<DVector<f64>>,
        c: [f64; 3],
    ) -> Self {
        let n = g0.len();
        let affine = p.as_ref().is_none_or(|p| p.iter().all(|&v| v == 0.0));
        let p = p.unwrap_or_else(|| DMatrix::zeros(n, n));
        let g1 = g1.unwrap_or_else(|| DVector::zeros(n));
        let (pa, ga, ha) = (p.clone(), g0.clone(), g1.clone());
        let (pb, gb, hb) = (p.clone(), g0, g1.clone());
        let hc = g1.clone();
        let mut row = Self::new(
            move |t, x| 0.5 * x.dot(&(&pa * x)) + (&ga + &ha * t).dot(x) + c[0] + c[1] * t + c[2] * t * t,
            move |t, x| &pb * x + &gb + &hb * t,
            move |t, x| hc.dot(x) + c[1] + 2.0 * c[2] * t,
            move |_, _| p.clone(),
            move |_, _| g1.clone(),
            move |_, _| 2.0 * c[2],
            affine,
        );
        row.quadratic_in_x = true;
        row
    }

    pub fn value(&self, t: f64, x: &DVector<f64>) -> f64 {
        (self.value)(t, x)
    }

    pub fn grad_x(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.grad_x)(t, x)
    }

    pub fn grad_t(&self, t: f64, x: &DVector<f64>) -> f64 {
        (self.grad_t)(t, x)
    }

    pub fn hess_xx(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        (self.hess_xx)(t, x)
    }

    pub fn hess_tx(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.hess_tx)(t, x)
    }

    pub fn hess_tt(&self, t: f64, x: &DVector<f64>) -> f64 {
        (self.hess_tt)(t, x)
    }

    pub fn is_affine(&self) -> bool {
        self.affine_in_x
    }

    /// `F(t, x + s w)`. Quadratic rows are expanded around `x`, which keeps
    /// the small step from being absorbed when `x` is large.
    pub fn value_along(&self, t: f64, x: &DVector<f64>, w: &DVector<f64>, s: f64) -> f64 {
        if self.quadratic_in_x {
            let curv = if self.affine_in_x { 0.0 } else { w.dot(&(self.hess_xx(t, x) * w)) };
            self.value(t, x) + s * (self.grad_x(t, x).dot(w) + 0.5 * s * curv)
        } else {
            self.value(t, &(x + w * s))
        }
    }
}

/// The feasible set `{x : F_i(t, x) <= 0 for all i}`.
#[derive(Clone)]
pub struct ConstraintSet {
    dim: usize,
    rows: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(dim: usize, rows: Vec<Constraint>) -> Self {
        Self { dim, rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Constraint] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_affine(&self) -> bool {
        self.rows.iter().all(Constraint::is_affine)
    }

    pub fn values(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.value(t, x)))
    }

    pub fn max_violation(&self, t: f64, x: &DVector<f64>) -> f64 {
        self.rows
            .iter()
            .map(|r| r.value(t, x))
            .fold(0.0, f64::max)
    }

    /// Rows `M x <= q` at time `t`; only meaningful when every row is affine.
    pub fn linear_rows(&self, t: f64) -> (DMatrix<f64>, DVector<f64>) {
        let zero = DVector::zeros(self.dim);
        let mut m = DMatrix::zeros(self.rows.len(), self.dim);
        let mut q = DVector::zeros(self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            m.set_row(i, &r.grad_x(t, &zero).transpose());
            q[i] = -r.value(t, &zero);
        }
        (m, q)
    }

    /// Jacobian of `F(t, .)` at `x`, one row per component.
    pub fn jacobian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.dim);
        for (i, r) in self.rows.iter().enumerate() {
            m.set_row(i, &r.grad_x(t, x).transpose());
        }
        m
    }
}

/// A user function with its own prox oracle.
#[derive(Clone)]
pub struct CustomFn {
    dim: usize,
    eval: ExtValueFn,
    prox: Option<ProxOracle>,
}

impl CustomFn {
    pub fn new(
        dim: usize,
        eval: impl Fn(f64, &DVector<f64>) -> ExtReal + Send + Sync + 'static,
        prox: Option<ProxOracle>,
    ) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            prox,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> ExtReal {
        (self.eval)(t, x)
    }

    pub fn prox(&self) -> Option<&ProxOracle> {
        self.prox.as_ref()
    }
}

/// Catalog of parameterized convex functions.
#[derive(Clone)]
pub enum ParamFunction {
    Smooth(SmoothFn),
    WeightedAbs(WeightedAbs),
    ConstraintIndicator(ConstraintSet),
    Custom(CustomFn),
}

impl fmt::Debug for ParamFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParamFunction::{}(dim = {})", self.kind(), self.dim())
    }
}

impl ParamFunction {
    /// `a(t) |x - b(t)|`.
    pub fn weighted_abs(a: ScalarPath, b: ScalarPath) -> Self {
        ParamFunction::WeightedAbs(WeightedAbs::new(a, b))
    }

    pub fn zero(dim: usize) -> Self {
        ParamFunction::Smooth(SmoothFn::zero(dim))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ParamFunction::Smooth(_) => "smooth",
            ParamFunction::WeightedAbs(_) => "weighted_abs",
            ParamFunction::ConstraintIndicator(_) => "constraint_indicator",
            ParamFunction::Custom(_) => "custom",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ParamFunction::Smooth(g) => g.dim(),
            ParamFunction::WeightedAbs(_) => 1,
            ParamFunction::ConstraintIndicator(c) => c.dim(),
            ParamFunction::Custom(c) => c.dim(),
        }
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> ExtReal {
        self.eval_with_slack(t, x, 0.0)
    }

    /// Like `eval`, but constraint rows may exceed zero by `slack`.
    pub fn eval_with_slack(&self, t: f64, x: &DVector<f64>, slack: f64) -> ExtReal {
        match self {
            ParamFunction::Smooth(g) => ExtReal::from_f64(g.value(t, x)),
            ParamFunction::WeightedAbs(w) => ExtReal::Finite(w.value(t, x[0])),
            ParamFunction::ConstraintIndicator(c) => {
                if c.rows().iter().all(|r| r.value(t, x) <= slack) {
                    ExtReal::ZERO
                } else {
                    ExtReal::PlusInf
                }
            }
            ParamFunction::Custom(c) => c.eval(t, x),
        }
    }

    /// Evaluation tolerant of round-off at constraint boundaries.
    pub fn eval_relaxed(&self, t: f64, x: &DVector<f64>) -> ExtReal {
        let slack = FEASIBILITY_TOL * (1.0 + x.amax());
        self.eval_with_slack(t, x, slack)
    }
}
