use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::epi::probe::TauSchedule;
use crate::epi::quotient::delta2_quotient;
use crate::error::{Error, Result};
use crate::model::function::{ParamFunction, SmoothFn, WeightedAbs};

const CAUCHY_TOL: f64 = 1e-6;
const BLOWUP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CshStatus {
    Found,
    NotFound,
    Inconclusive,
}

/// Supporting triple `(z, xi, beta)` of the quotient at one `tau`:
/// `xi` is a subgradient at `z` and `beta = q(z) - xi z`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CshRow {
    pub tau: f64,
    pub z: f64,
    pub xi: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CshReport {
    pub status: CshStatus,
    /// Extrapolated `(z, xi, beta)` when found.
    pub limit: Option<[f64; 3]>,
    /// Which construction produced the limit.
    pub family: Option<&'static str>,
    pub rows: Vec<CshRow>,
}

impl CshReport {
    pub fn found(&self) -> bool {
        self.status == CshStatus::Found
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidParameter(format!("csv output: {e}"));
        w.write_record(["tau", "z", "xi", "beta"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([r.tau.to_string(), r.z.to_string(), r.xi.to_string(), r.beta.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidParameter(format!("csv output: {e}")))?;
        Ok(())
    }
}

enum Family {
    /// Kink or stationary point with the least-norm subgradient there.
    Critical,
    /// The origin with its least-norm subgradient.
    Origin,
}

impl Family {
    fn name(&self) -> &'static str {
        match self {
            Family::Critical => "critical_point",
            Family::Origin => "origin",
        }
    }
}

fn weighted_abs_triple(w: &WeightedAbs, f: &ParamFunction, x: f64, v: f64, tau: f64, fam: &Family) -> Result<CshRow> {
    let a = w.a.eval(tau);
    let kink = (w.b.eval(tau) - x) / tau;
    let right = (a - v) / tau;
    let left = -(a + v) / tau;
    let (z, xi) = match fam {
        Family::Critical => {
            if left <= 0.0 && 0.0 <= right {
                (kink, 0.0)
            } else if right < 0.0 {
                (kink.max(0.0), right)
            } else {
                (kink.min(0.0), left)
            }
        }
        Family::Origin => {
            let xi = if kink < 0.0 {
                right
            } else if kink > 0.0 {
                left
            } else {
                0.0f64.clamp(left, right)
            };
            (0.0, xi)
        }
    };
    let q = delta2_quotient(f, &DVector::from_element(1, x), &DVector::from_element(1, v), tau, &DVector::from_element(1, z))?;
    Ok(CshRow {
        tau,
        z,
        xi,
        beta: q.to_f64() - xi * z,
    })
}

fn smooth_triple(g: &SmoothFn, f: &ParamFunction, x: f64, v: f64, tau: f64, fam: &Family) -> Result<CshRow> {
    let slope = |w: f64| (g.grad_x(tau, &DVector::from_element(1, x + tau * w))[0] - v) / tau;
    let z = match fam {
        Family::Origin => 0.0,
        Family::Critical => {
            let mut w = 0.0;
            let mut ok = false;
            for _ in 0..50 {
                let s = slope(w);
                if s.abs() <= 1e-12 * (1.0 + v.abs() / tau) {
                    ok = true;
                    break;
                }
                let curv = g.hess_xx(tau, &DVector::from_element(1, x + tau * w))[(0, 0)];
                if !(curv > 1e-14) {
                    break;
                }
                w -= s / curv;
            }
            if !ok {
                f64::NAN
            } else {
                w
            }
        }
    };
    if z.is_nan() {
        return Ok(CshRow {
            tau,
            z,
            xi: f64::NAN,
            beta: f64::NAN,
        });
    }
    let xi = slope(z);
    let q = delta2_quotient(f, &DVector::from_element(1, x), &DVector::from_element(1, v), tau, &DVector::from_element(1, z))?;
    Ok(CshRow {
        tau,
        z,
        xi,
        beta: q.to_f64() - xi * z,
    })
}

enum Verdict {
    Converges([f64; 3]),
    Diverges,
    Unclear,
}

fn increment(a: &CshRow, b: &CshRow) -> f64 {
    (a.z - b.z).abs().max((a.xi - b.xi).abs()).max((a.beta - b.beta).abs())
}

fn assess(rows: &[CshRow]) -> Verdict {
    let n = rows.len();
    if rows.iter().any(|r| !(r.z.is_finite() && r.xi.is_finite() && r.beta.is_finite())) {
        return Verdict::Diverges;
    }
    if n < 5 {
        return Verdict::Unclear;
    }
    let last = &rows[n - 1];
    if last.z.abs().max(last.xi.abs()).max(last.beta.abs()) >= BLOWUP {
        return Verdict::Diverges;
    }
    let incs: Vec<f64> = rows[n - 5..].windows(2).map(|w| increment(&w[0], &w[1])).collect();
    let d_last = *incs.last().expect("nonempty");
    let shrinking = incs.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    if d_last < CAUCHY_TOL && shrinking {
        let prev = &rows[n - 2];
        let k = last.tau / (prev.tau - last.tau);
        let ext = |a: f64, b: f64| a + (a - b) * k;
        return Verdict::Converges([ext(last.z, prev.z), ext(last.xi, prev.xi), ext(last.beta, prev.beta)]);
    }
    if incs.windows(2).all(|w| w[1] >= 1.5 * w[0]) && d_last >= CAUCHY_TOL {
        return Verdict::Diverges;
    }
    Verdict::Unclear
}

/// Looks for a convergent family of supporting hyperplanes of the
/// second-order quotient of a one-dimensional catalog function.
pub fn csh_probe(f: &ParamFunction, x: &DVector<f64>, v: &DVector<f64>, sched: &TauSchedule) -> Result<CshReport> {
    if f.dim() != 1 {
        return Err(Error::UnsupportedVariant(format!("supporting hyperplane probe needs dimension 1, got {}", f.dim())));
    }
    let (x, v) = (x[0], v[0]);
    let triple = |tau: f64, fam: &Family| -> Result<CshRow> {
        match f {
            ParamFunction::WeightedAbs(w) => weighted_abs_triple(w, f, x, v, tau, fam),
            ParamFunction::Smooth(g) => smooth_triple(g, f, x, v, tau, fam),
            other => Err(Error::UnsupportedVariant(format!("supporting hyperplane probe for {}", other.kind()))),
        }
    };
    let mut first_rows = None;
    let mut all_diverge = true;
    for fam in [Family::Critical, Family::Origin] {
        let rows = sched
            .exec
            .map(sched.values(), |&tau| triple(tau, &fam))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        match assess(&rows) {
            Verdict::Converges(limit) => {
                return Ok(CshReport {
                    status: CshStatus::Found,
                    limit: Some(limit),
                    family: Some(fam.name()),
                    rows,
                })
            }
            Verdict::Diverges => {}
            Verdict::Unclear => all_diverge = false,
        }
        first_rows.get_or_insert(rows);
    }
    Ok(CshReport {
        status: if all_diverge { CshStatus::NotFound } else { CshStatus::Inconclusive },
        limit: None,
        family: None,
        rows: first_rows.unwrap_or_default(),
    })
}
