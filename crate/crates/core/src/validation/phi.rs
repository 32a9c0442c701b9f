use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::epi::second_order::d2e_closed_form;
use crate::error::{Error, Result};
use crate::model::extreal::ExtReal;
use crate::model::function::{ParamFunction, WeightedAbs};
use crate::validation::fd::io_err;

const STENCIL_STEP: f64 = 1e-3;
const FLAT_TOL: f64 = 1e-6;
pub const LEGENDRE_RANGE: f64 = 5.0;
pub const LEGENDRE_POINTS: usize = 4001;

fn weighted_abs(f: &ParamFunction) -> Result<&WeightedAbs> {
    match f {
        ParamFunction::WeightedAbs(w) => Ok(w),
        other => Err(Error::UnsupportedVariant(format!(
            "no analytic conjugate for {} functions",
            other.kind()
        ))),
    }
}

/// `f*(t, u) = u b(t) + indicator of [-a(t), a(t)]`.
pub fn conjugate(w: &WeightedAbs, t: f64, u: f64) -> ExtReal {
    let a = w.a.eval(t);
    if u.abs() <= a * (1.0 + 1e-15) {
        ExtReal::Finite(u * w.b.eval(t))
    } else {
        ExtReal::PlusInf
    }
}

/// Fenchel-Young gap `f*(t, v) + f(t, x) - v x`.
pub fn phi(f: &ParamFunction, x: f64, v: f64, t: f64) -> Result<f64> {
    let w = weighted_abs(f)?;
    let conj = conjugate(w, t, v).finite().ok_or(Error::ConjugateInfinite(t))?;
    Ok(conj + w.value(t, x) - v * x)
}

#[derive(Debug, Clone, Serialize)]
pub struct PhiReport {
    pub samples: Vec<(f64, f64)>,
    pub phi0: f64,
    pub d1: f64,
    pub d2: f64,
    /// `Phi'(0) = 0` within tolerance. Numeric evidence only: differences
    /// cannot certify twice differentiability.
    pub hypothesis_holds: bool,
    pub nonnegative: bool,
}

impl PhiReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "phi"]).map_err(io_err)?;
        for (t, p) in &self.samples {
            w.write_record([t.to_string(), p.to_string()]).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::InvalidParameter(e.to_string()))
    }
}

/// Samples of the gap function and one-sided stencil estimates of its first
/// two derivatives at 0.
pub fn phi_gap(f: &ParamFunction, x: f64, v: f64, ts: &[f64]) -> Result<PhiReport> {
    let eval = |t: f64| phi(f, x, v, t);
    let samples = ts.iter().map(|&t| eval(t).map(|p| (t, p))).collect::<Result<Vec<_>>>()?;
    let h = STENCIL_STEP;
    let p: Vec<f64> = (0..4).map(|k| eval(k as f64 * h)).collect::<Result<_>>()?;
    let d1 = (-3.0 * p[0] + 4.0 * p[1] - p[2]) / (2.0 * h);
    let d2 = (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) / (h * h);
    let scale = 1.0 + p[0].abs();
    let nonnegative = samples.iter().all(|&(_, s)| s >= -1e-12 * scale) && p.iter().all(|&s| s >= -1e-12 * scale);
    Ok(PhiReport {
        samples,
        phi0: p[0],
        d1,
        d2,
        hypothesis_holds: p[0].abs() <= FLAT_TOL && d1.abs() <= FLAT_TOL,
        nonnegative,
    })
}

/// Second epi-derivative of the conjugate at `v` for `x` when `x` sits on
/// the kink at `t = 0`: zero on the interior of the multiplier range, the
/// indicator of a half-line at an endpoint.
pub fn conjugate_d2e(f: &ParamFunction, x: f64, v: f64) -> Result<impl Fn(f64) -> ExtReal> {
    let w = weighted_abs(f)?;
    let a0 = w.a.eval(0.0);
    let b0 = w.b.eval(0.0);
    if (x - b0).abs() > 1e-12 * (1.0 + b0.abs()) {
        return Err(Error::UnsupportedVariant(
            "conjugate second epi-derivative needs x on the kink".into(),
        ));
    }
    let slope = w.b.derivative_at_zero();
    let da = w.a.derivative_at_zero();
    let tol = 1e-12 * (1.0 + a0);
    let upper = (v - a0).abs() <= tol;
    let lower = (v + a0).abs() <= tol;
    if v.abs() > a0 + tol {
        return Err(Error::SubgradientInvalid(format!("|v| = {} exceeds a(0) = {a0}", v.abs())));
    }
    Ok(move |u: f64| {
        if (upper && u > da) || (lower && u < -da) {
            ExtReal::PlusInf
        } else {
            ExtReal::Finite(u * slope)
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugateIdentityRow {
    pub u: f64,
    pub legendre: f64,
    pub rhs: ExtReal,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugateIdentityReport {
    pub half_phi_second: f64,
    pub max_gap: f64,
    pub compared: usize,
    pub rows: Vec<ConjugateIdentityRow>,
}

/// Discrete Legendre transform of the closed-form second epi-derivative on
/// the grid, compared pointwise with the conjugate's second epi-derivative
/// plus half of the gap function's curvature. Points where the right side
/// is infinite are listed but not compared.
pub fn conjugate_identity(f: &ParamFunction, x: f64, v: f64) -> Result<ConjugateIdentityReport> {
    let s = |z: f64| DVector::from_element(1, z);
    let d = d2e_closed_form(f, &s(x), &s(v))?;
    let conj = conjugate_d2e(f, x, v)?;
    let phi = phi_gap(f, x, v, &[])?;
    let half = 0.5 * phi.d2;
    let grid: Vec<f64> = (0..LEGENDRE_POINTS)
        .map(|k| -LEGENDRE_RANGE + 2.0 * LEGENDRE_RANGE * k as f64 / (LEGENDRE_POINTS - 1) as f64)
        .collect();
    let values: Vec<(f64, f64)> = grid
        .iter()
        .filter_map(|&w| d.eval(&s(w)).finite().map(|dv| (w, dv)))
        .collect();
    if values.is_empty() {
        return Err(Error::ConjugateInfinite(0.0));
    }
    let mut rows = Vec::with_capacity(grid.len());
    let mut max_gap: f64 = 0.0;
    let mut compared = 0;
    for &u in &grid {
        let legendre = values.iter().map(|&(w, dv)| u * w - dv).fold(f64::NEG_INFINITY, f64::max);
        let rhs = match conj(u) {
            ExtReal::Finite(c) => ExtReal::Finite(c + half),
            other => other,
        };
        if let ExtReal::Finite(r) = rhs {
            max_gap = max_gap.max((legendre - r).abs());
            compared += 1;
        }
        rows.push(ConjugateIdentityRow { u, legendre, rhs });
    }
    Ok(ConjugateIdentityReport {
        half_phi_second: half,
        max_gap,
        compared,
        rows,
    })
}
