use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

pub const DEFAULT_T_MAX: f64 = 1.0;

const D1_STEP: f64 = 1e-4;
const D2_STEP: f64 = 1e-3;

/// One-sided second-order first derivative at 0.
fn forward_d1(f: &dyn Fn(f64) -> f64, h: f64) -> f64 {
    (-3.0 * f(0.0) + 4.0 * f(h) - f(2.0 * h)) / (2.0 * h)
}

/// One-sided second-order second derivative at 0.
fn forward_d2(f: &dyn Fn(f64) -> f64, h: f64) -> f64 {
    (2.0 * f(0.0) - 5.0 * f(h) + 4.0 * f(2.0 * h) - f(3.0 * h)) / (h * h)
}

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * t + ci)
}

/// A real-valued function of `t` on `[0, t_max]`.
#[derive(Clone)]
pub struct ScalarPath {
    eval: ScalarFn,
    d0: Option<f64>,
    dd0: Option<f64>,
    t_max: f64,
}

impl fmt::Debug for ScalarPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarPath")
            .field("at_0", &self.eval(0.0))
            .field("d0", &self.d0)
            .field("dd0", &self.dd0)
            .field("t_max", &self.t_max)
            .finish()
    }
}

impl ScalarPath {
    /// Wraps a closure. Supplied derivatives are spot-checked against
    /// finite differences at construction.
    pub fn new(
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d0: Option<f64>,
        dd0: Option<f64>,
        t_max: f64,
    ) -> Result<Self> {
        if !(t_max > 0.0) {
            return Err(Error::InvalidParameter(format!("t_max must be > 0, got {t_max}")));
        }
        let path = Self {
            eval: Arc::new(eval),
            d0,
            dd0,
            t_max,
        };
        path.spot_check()?;
        Ok(path)
    }

    /// `c[0] + c[1] t + c[2] t^2 + ...` with exact derivatives at 0.
    pub fn polynomial(coeffs: &[f64]) -> Self {
        let c: Vec<f64> = coeffs.to_vec();
        let d0 = c.get(1).copied().unwrap_or(0.0);
        let dd0 = 2.0 * c.get(2).copied().unwrap_or(0.0);
        Self {
            eval: Arc::new(move |t| poly_eval(&c, t)),
            d0: Some(d0),
            dd0: Some(dd0),
            t_max: DEFAULT_T_MAX,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::polynomial(&[c])
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    fn spot_check(&self) -> Result<()> {
        let f = |t: f64| self.eval(t);
        if let Some(d0) = self.d0 {
            let fd = forward_d1(&f, D1_STEP.min(self.t_max / 2.0));
            if (fd - d0).abs() > 1e-6 * (1.0 + d0.abs()) {
                return Err(Error::PathDerivative(format!(
                    "declared first derivative {d0} but differences give {fd}"
                )));
            }
        }
        if let Some(dd0) = self.dd0 {
            let fd = forward_d2(&f, D2_STEP.min(self.t_max / 3.0));
            if (fd - dd0).abs() > 1e-6 * (1.0 + dd0.abs()) {
                return Err(Error::PathDerivative(format!(
                    "declared second derivative {dd0} but differences give {fd}"
                )));
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.eval)(t)
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn d0(&self) -> Option<f64> {
        self.d0
    }

    pub fn dd0(&self) -> Option<f64> {
        self.dd0
    }

    /// Declared derivative, or a one-sided difference estimate.
    pub fn derivative_at_zero(&self) -> f64 {
        self.d0
            .unwrap_or_else(|| forward_d1(&|t| self.eval(t), D1_STEP.min(self.t_max / 2.0)))
    }

    pub fn second_derivative_at_zero(&self) -> f64 {
        self.dd0
            .unwrap_or_else(|| forward_d2(&|t| self.eval(t), D2_STEP.min(self.t_max / 3.0)))
    }
}

/// A vector-valued function of `t` on `[0, t_max]`.
#[derive(Clone)]
pub struct VectorPath {
    dim: usize,
    eval: VectorFn,
    d0: Option<DVector<f64>>,
    t_max: f64,
}

impl fmt::Debug for VectorPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorPath")
            .field("dim", &self.dim)
            .field("at_0", &self.eval(0.0).as_slice())
            .field("d0", &self.d0.as_ref().map(|d| d.as_slice().to_vec()))
            .finish()
    }
}

impl VectorPath {
    pub fn new(
        dim: usize,
        eval: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        d0: Option<DVector<f64>>,
        t_max: f64,
    ) -> Result<Self> {
        if !(t_max > 0.0) {
            return Err(Error::InvalidParameter(format!("t_max must be > 0, got {t_max}")));
        }
        let path = Self {
            dim,
            eval: Arc::new(eval),
            d0,
            t_max,
        };
        let x0 = path.eval(0.0);
        if x0.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "path declared dimension {dim} but evaluates to length {}",
                x0.len()
            )));
        }
        if let Some(d0) = &path.d0 {
            if d0.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "path derivative has length {}, expected {dim}",
                    d0.len()
                )));
            }
            let h = D1_STEP.min(t_max / 2.0);
            let fd = (path.eval(0.0) * -3.0 + path.eval(h) * 4.0 - path.eval(2.0 * h)) / (2.0 * h);
            for i in 0..dim {
                if (fd[i] - d0[i]).abs() > 1e-6 * (1.0 + d0[i].abs()) {
                    return Err(Error::PathDerivative(format!(
                        "component {i}: declared {} but differences give {}",
                        d0[i], fd[i]
                    )));
                }
            }
        }
        Ok(path)
    }

    /// `c[0] + c[1] t + c[2] t^2 + ...` with vector coefficients.
    pub fn polynomial(coeffs: Vec<DVector<f64>>) -> Result<Self> {
        let dim = coeffs
            .first()
            .map(|c| c.len())
            .ok_or_else(|| Error::InvalidParameter("polynomial path needs coefficients".into()))?;
        if coeffs.iter().any(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch(
                "polynomial path coefficients differ in length".into(),
            ));
        }
        let d0 = coeffs
            .get(1)
            .cloned()
            .unwrap_or_else(|| DVector::zeros(dim));
        Ok(Self {
            dim,
            eval: Arc::new(move |t| {
                coeffs
                    .iter()
                    .rev()
                    .fold(DVector::zeros(dim), |acc, c| acc * t + c)
            }),
            d0: Some(d0),
            t_max: DEFAULT_T_MAX,
        })
    }

    pub fn constant(v: DVector<f64>) -> Self {
        Self::polynomial(vec![v]).expect("one coefficient")
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        (self.eval)(t)
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn d0(&self) -> Option<&DVector<f64>> {
        self.d0.as_ref()
    }
}
