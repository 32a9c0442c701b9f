use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::richardson::richardson;
use crate::model::operator::ParamOperator;
use crate::model::problem::DEFAULT_SEED;

const BASE_STEP: f64 = 0.05;
const LEVELS: usize = 7;
const TAIL_TOL: f64 = 1e-6;
const AUDIT_SAMPLES: usize = 64;
const AFFINITY_PROBES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SemiSource {
    Analytic,
    Numeric,
}

/// `w -> J w + s`, the semi-derivative of `A` at `(0, y0)`.
#[derive(Debug, Clone)]
pub struct SemiDerivative {
    pub base: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub shift: DVector<f64>,
    pub lipschitz: f64,
    pub strong_mono: f64,
    pub source: SemiSource,
    /// Largest extrapolation error over the probed directions.
    pub tail: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SemiSummary {
    pub jacobian: Vec<Vec<f64>>,
    pub shift: Vec<f64>,
    pub lipschitz: f64,
    pub strong_mono: f64,
    pub source: SemiSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail: Option<f64>,
}

impl SemiDerivative {
    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.jacobian * w + &self.shift
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn summary(&self) -> SemiSummary {
        let j = &self.jacobian;
        SemiSummary {
            jacobian: (0..j.nrows()).map(|i| j.row(i).iter().copied().collect()).collect(),
            shift: self.shift.as_slice().to_vec(),
            lipschitz: self.lipschitz,
            strong_mono: self.strong_mono,
            source: self.source,
            tail: self.tail,
        }
    }
}

pub fn semi_derivative(a: &ParamOperator, y0: &DVector<f64>) -> Result<SemiDerivative> {
    semi_derivative_with(a, y0, BASE_STEP, DEFAULT_SEED)
}

/// Semi-derivative from analytic Jacobians when present, otherwise from
/// extrapolated quotients with steps `h / 2^k`. `h` also bounds the
/// parameter values at which `A` is evaluated.
pub fn semi_derivative_with(a: &ParamOperator, y0: &DVector<f64>, h: f64, seed: u64) -> Result<SemiDerivative> {
    let n = a.dim();
    if y0.len() != n {
        return Err(Error::DimensionMismatch("semi-derivative base point".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = match (a.jac_x(0.0, y0), a.jac_t(0.0, y0)) {
        (Some(jacobian), Some(shift)) => SemiDerivative {
            base: y0.clone(),
            jacobian,
            shift,
            lipschitz: a.lipschitz(),
            strong_mono: a.strong_mono(),
            source: SemiSource::Analytic,
            tail: None,
        },
        _ => numeric(a, y0, h, &mut rng)?,
    };
    audit(&sd, &mut rng)?;
    Ok(sd)
}

fn limit(a: &ParamOperator, y0: &DVector<f64>, a0: &DVector<f64>, w: &DVector<f64>, h: f64) -> Result<(DVector<f64>, f64)> {
    let quotients: Vec<DVector<f64>> = (0..LEVELS)
        .map(|k| {
            let tau = h / (1u64 << k) as f64;
            (a.eval(tau, &(y0 + w * tau)) - a0) / tau
        })
        .collect();
    if quotients.iter().any(|q| q.iter().any(|v| !v.is_finite())) {
        return Err(Error::NotSemidifferentiable("non-finite difference quotient".into()));
    }
    let ex = richardson(&quotients);
    let scale = 1.0 + ex.estimate.amax();
    if ex.error > TAIL_TOL * scale {
        return Err(Error::NotSemidifferentiable(format!(
            "limit along w = {:?} did not settle (tail {:e})",
            w.as_slice(),
            ex.error
        )));
    }
    Ok((ex.estimate, ex.error))
}

fn numeric(a: &ParamOperator, y0: &DVector<f64>, h: f64, rng: &mut ChaCha8Rng) -> Result<SemiDerivative> {
    let n = y0.len();
    let a0 = a.eval(0.0, y0);
    let (shift, mut tail) = limit(a, y0, &a0, &DVector::zeros(n), h)?;
    let mut jacobian = DMatrix::zeros(n, n);
    for i in 0..n {
        let (col, err) = limit(a, y0, &a0, &DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 }), h)?;
        tail = tail.max(err);
        jacobian.set_column(i, &(col - &shift));
    }
    for _ in 0..AFFINITY_PROBES {
        let w = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..=2.0));
        let (lw, err) = limit(a, y0, &a0, &w, h)?;
        tail = tail.max(err);
        let model = &jacobian * &w + &shift;
        let gap = (&lw - &model).amax();
        if gap > 1e-5 * (1.0 + lw.amax()) {
            return Err(Error::NotSemidifferentiable(format!(
                "limit along w = {:?} is {:?}, not affine in w (gap {gap:e})",
                w.as_slice(),
                lw.as_slice()
            )));
        }
    }
    Ok(SemiDerivative {
        base: y0.clone(),
        jacobian,
        shift,
        lipschitz: a.lipschitz(),
        strong_mono: a.strong_mono(),
        source: SemiSource::Numeric,
        tail: Some(tail),
    })
}

/// The linear part inherits the Lipschitz and monotonicity constants of `A`.
fn audit(sd: &SemiDerivative, rng: &mut ChaCha8Rng) -> Result<()> {
    let n = sd.dim();
    let (m, alpha) = (sd.lipschitz, sd.strong_mono);
    let rel = if sd.source == SemiSource::Numeric { 1e-6 } else { 1e-9 };
    for _ in 0..AUDIT_SAMPLES {
        let w1 = DVector::from_fn(n, |_, _| rng.gen_range(-4.0..=4.0));
        let w2 = DVector::from_fn(n, |_, _| rng.gen_range(-4.0..=4.0));
        let d = &w2 - &w1;
        let jd = &sd.jacobian * &d;
        let dn = d.norm();
        if jd.norm() > m * dn * (1.0 + rel) + 1e-12 {
            return Err(Error::AuditFailed(format!(
                "semi-derivative exceeds Lipschitz constant {m}: |J d| = {} for |d| = {dn}",
                jd.norm()
            )));
        }
        if jd.dot(&d) < alpha * dn * dn * (1.0 - rel) - 1e-12 {
            return Err(Error::AuditFailed(format!(
                "semi-derivative is not {alpha}-strongly monotone: <J d, d> = {} for |d| = {dn}",
                jd.dot(&d)
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn identity_has_zero_shift() {
        let sd = semi_derivative(&ParamOperator::identity(2), &DVector::zeros(2)).unwrap();
        assert_eq!(sd.jacobian, DMatrix::identity(2, 2));
        assert_eq!(sd.shift, DVector::zeros(2));
        assert_eq!(sd.source, SemiSource::Analytic);
    }

    #[test]
    fn numeric_limit_of_time_scaled_identity() {
        let a = ParamOperator::new(1, |t, y| y * (1.0 + t), 2.0, 1.0);
        let sd = semi_derivative(&a, &s(1.0)).unwrap();
        assert_eq!(sd.source, SemiSource::Numeric);
        assert!((sd.jacobian[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((sd.shift[0] - 1.0).abs() < 1e-9);
        assert!((sd.apply(&s(2.0))[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn analytic_cubic() {
        let a = ParamOperator::new(1, |t, y| y.map(|u| u * u * u + u + t), 4.0, 1.0)
            .with_jacobians(|_, y| DMatrix::from_element(1, 1, 3.0 * y[0] * y[0] + 1.0), |_, _| s(1.0));
        let sd = semi_derivative(&a, &s(0.0)).unwrap();
        assert_eq!(sd.apply(&s(0.5))[0], 1.5);
    }

    #[test]
    fn kinked_operator_is_refused() {
        // 1.5 y + 0.5 abs(y) is positively homogeneous but not linear at 0.
        let a = ParamOperator::new(1, |_, y| y.map(|u| 1.5 * u + 0.5 * u.abs()), 2.0, 1.0);
        assert!(matches!(semi_derivative(&a, &s(0.0)), Err(Error::NotSemidifferentiable(_))));
    }
}
