use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{min_sym_eigenvalue, spectral_norm};
use crate::model::function::SmoothFn;

pub type FieldFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// `A(t, y)`, uniformly Lipschitz with constant `lipschitz` and uniformly
/// strongly monotone with constant `strong_mono`.
#[derive(Clone)]
pub struct ParamOperator {
    dim: usize,
    eval: FieldFn,
    lipschitz: f64,
    strong_mono: f64,
    jac_x: Option<MatrixFn>,
    jac_t: Option<FieldFn>,
}

impl fmt::Debug for ParamOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamOperator")
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("strong_mono", &self.strong_mono)
            .field("analytic_jacobians", &self.jac_x.is_some())
            .finish()
    }
}

impl ParamOperator {
    pub fn new(
        dim: usize,
        eval: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        lipschitz: f64,
        strong_mono: f64,
    ) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            lipschitz,
            strong_mono,
            jac_x: None,
            jac_t: None,
        }
    }

    pub fn with_jacobians(
        mut self,
        jac_x: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        jac_t: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jac_x = Some(Arc::new(jac_x));
        self.jac_t = Some(Arc::new(jac_t));
        self
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, |_, y| y.clone(), 1.0, 1.0).with_jacobians(
            move |_, _| DMatrix::identity(dim, dim),
            move |_, _| DVector::zeros(dim),
        )
    }

    /// `A(t, y) = (m0 + t m1) y + r0 + t r1` with constants taken over
    /// `t` in `[0, t_max]`. The extremes of the symmetric part's smallest
    /// eigenvalue and of the spectral norm sit at the endpoints.
    pub fn affine(
        m0: DMatrix<f64>,
        m1: Option<DMatrix<f64>>,
        r0: Option<DVector<f64>>,
        r1: Option<DVector<f64>>,
        t_max: f64,
    ) -> Self {
        let n = m0.nrows();
        let m1 = m1.unwrap_or_else(|| DMatrix::zeros(n, n));
        let r0 = r0.unwrap_or_else(|| DVector::zeros(n));
        let r1 = r1.unwrap_or_else(|| DVector::zeros(n));
        let end = &m0 + &m1 * t_max;
        let lipschitz = spectral_norm(&m0).max(spectral_norm(&end));
        let strong_mono = min_sym_eigenvalue(&m0).min(min_sym_eigenvalue(&end));
        let (ma, mb) = (m0.clone(), m1.clone());
        let (ja, jb) = (m0, m1.clone());
        let rt = r1.clone();
        Self::new(
            n,
            move |t, y| (&ma + &mb * t) * y + &r0 + &r1 * t,
            lipschitz,
            strong_mono,
        )
        .with_jacobians(move |t, _| &ja + &jb * t, move |_, y| &m1 * y + &rt)
    }

    /// The gradient map of a smooth function, with its Hessians as Jacobians.
    pub fn gradient_of(g: &SmoothFn, lipschitz: f64, strong_mono: f64) -> Self {
        let (a, b, c) = (g.clone(), g.clone(), g.clone());
        Self::new(g.dim(), move |t, y| a.grad_x(t, y), lipschitz, strong_mono)
            .with_jacobians(move |t, y| b.hess_xx(t, y), move |t, y| c.hess_tx(t, y))
    }

    pub fn with_constants(mut self, lipschitz: f64, strong_mono: f64) -> Self {
        self.lipschitz = lipschitz;
        self.strong_mono = strong_mono;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        (self.eval)(t, y)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn strong_mono(&self) -> f64 {
        self.strong_mono
    }

    pub fn jac_x(&self, t: f64, y: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jac_x.as_ref().map(|j| j(t, y))
    }

    pub fn jac_t(&self, t: f64, y: &DVector<f64>) -> Option<DVector<f64>> {
        self.jac_t.as_ref().map(|j| j(t, y))
    }

    pub fn has_jacobians(&self) -> bool {
        self.jac_x.is_some() && self.jac_t.is_some()
    }
}

impl Default for ParamOperator {
    fn default() -> Self {
        Self::identity(1)
    }
}
