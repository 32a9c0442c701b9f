use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::epi::quotient::{quotient_at, quotient_base};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::extreal::ExtReal;
use crate::model::function::ParamFunction;

const GRID: usize = 33;
const ZOOM_ROUNDS: usize = 40;
const DIVERGENCE_THRESHOLD: f64 = 1e6;
const TAIL: usize = 6;

/// Decreasing positive sequence of quotient parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSchedule {
    values: Vec<f64>,
    pub exec: Exec,
}

impl Default for TauSchedule {
    fn default() -> Self {
        Self::geometric(1, 20)
    }
}

impl TauSchedule {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|&t| !(t > 0.0)) || values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter(
                "tau schedule must be positive and strictly decreasing".into(),
            ));
        }
        Ok(Self {
            values,
            exec: Exec::default(),
        })
    }

    /// `2^-k` for `k` in `k_min..=k_max`.
    pub fn geometric(k_min: i32, k_max: i32) -> Self {
        Self {
            values: (k_min..=k_max).map(|k| 2f64.powi(-k)).collect(),
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn smallest(&self) -> f64 {
        *self.values.last().expect("nonempty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EpiClass {
    FiniteLimit,
    DivergesMinusInf,
    DivergesPlusInf,
    Inconclusive,
}

impl EpiClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EpiClass::FiniteLimit => "FINITE_LIMIT",
            EpiClass::DivergesMinusInf => "DIVERGES_MINUS_INF",
            EpiClass::DivergesPlusInf => "DIVERGES_PLUS_INF",
            EpiClass::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TauRow {
    pub tau: f64,
    /// Minimum of the quotient over the box of half-width `sqrt(tau)`.
    pub lower: ExtReal,
    /// Minimum over the box of half-width `sqrt(tau) / 2`.
    pub upper: ExtReal,
    /// `2 upper - lower`, removing the first-order effect of the radius.
    pub estimate: ExtReal,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpiProbeEntry {
    pub direction: Vec<f64>,
    pub lower: ExtReal,
    pub upper: ExtReal,
    pub value: ExtReal,
    pub class: EpiClass,
    pub rows: Vec<TauRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpiProbeReport {
    pub entries: Vec<EpiProbeEntry>,
}

impl EpiProbeReport {
    /// One row per direction.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidParameter(format!("csv output: {e}"));
        w.write_record(["direction", "lower", "upper", "value", "class"]).map_err(io)?;
        for e in &self.entries {
            w.write_record([
                fmt_dir(&e.direction),
                e.lower.to_string(),
                e.upper.to_string(),
                e.value.to_string(),
                e.class.as_str().to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidParameter(format!("csv output: {e}")))?;
        Ok(())
    }

    /// One row per direction and tau.
    pub fn write_tau_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidParameter(format!("csv output: {e}"));
        w.write_record(["direction", "tau", "lower", "upper", "estimate"]).map_err(io)?;
        for e in &self.entries {
            for r in &e.rows {
                w.write_record([
                    fmt_dir(&e.direction),
                    r.tau.to_string(),
                    r.lower.to_string(),
                    r.upper.to_string(),
                    r.estimate.to_string(),
                ])
                .map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::InvalidParameter(format!("csv output: {e}")))?;
        Ok(())
    }
}

fn fmt_dir(d: &[f64]) -> String {
    d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Minimum of `eval` over the box `[lo, hi]` by a grid search that zooms
/// in around the best point; kinks at scale `tau` need the refinement.
fn box_min(lo: &[f64], hi: &[f64], eval: &dyn Fn(&[f64]) -> ExtReal) -> ExtReal {
    let dim = lo.len();
    let (mut cur_lo, mut cur_hi) = (lo.to_vec(), hi.to_vec());
    let mut best = ExtReal::PlusInf;
    let mut best_pt: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut pt = vec![0.0; dim];
    for _ in 0..ZOOM_ROUNDS {
        let total = GRID.pow(dim as u32);
        let mut round_best = ExtReal::PlusInf;
        let mut round_pt = best_pt.clone();
        for idx in 0..total {
            let mut rest = idx;
            for d in 0..dim {
                let i = rest % GRID;
                rest /= GRID;
                pt[d] = cur_lo[d] + (cur_hi[d] - cur_lo[d]) * i as f64 / (GRID - 1) as f64;
            }
            let val = eval(&pt);
            if val < round_best {
                round_best = val;
                round_pt.copy_from_slice(&pt);
            }
        }
        if round_best < best {
            best = round_best;
            best_pt = round_pt;
        }
        if best == ExtReal::PlusInf {
            return best;
        }
        let mut done = true;
        for d in 0..dim {
            let spacing = (cur_hi[d] - cur_lo[d]) / (GRID - 1) as f64;
            let half = 2.0 * spacing;
            cur_lo[d] = (best_pt[d] - half).max(lo[d]);
            cur_hi[d] = (best_pt[d] + half).min(hi[d]);
            if cur_hi[d] - cur_lo[d] > 1e-15 * (1.0 + best_pt[d].abs()) {
                done = false;
            }
        }
        if done {
            break;
        }
    }
    best
}

fn richardson(lower: ExtReal, upper: ExtReal) -> ExtReal {
    match (lower, upper) {
        (ExtReal::Finite(l), ExtReal::Finite(u)) => ExtReal::from_f64(2.0 * u - l),
        (_, u) => u,
    }
}

fn classify(estimates: &[ExtReal]) -> (EpiClass, ExtReal) {
    let last = *estimates.last().expect("nonempty schedule");
    match last {
        ExtReal::PlusInf => return (EpiClass::DivergesPlusInf, last),
        ExtReal::MinusInf => return (EpiClass::DivergesMinusInf, last),
        ExtReal::Finite(x) if x >= DIVERGENCE_THRESHOLD => return (EpiClass::DivergesPlusInf, ExtReal::PlusInf),
        ExtReal::Finite(x) if x <= -DIVERGENCE_THRESHOLD => return (EpiClass::DivergesMinusInf, ExtReal::MinusInf),
        _ => {}
    }
    let finite: Vec<f64> = estimates
        .iter()
        .rev()
        .take(TAIL)
        .take_while(|e| e.is_finite())
        .map(|e| e.to_f64())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    if finite.len() < 4 {
        return (EpiClass::Inconclusive, last);
    }
    let x = *finite.last().expect("nonempty");
    let diffs: Vec<f64> = finite.windows(2).map(|w| w[1] - w[0]).collect();
    let d_last = *diffs.last().expect("nonempty");
    let scale = 1.0 + x.abs();
    let same_sign = diffs.iter().all(|d| d.signum() == d_last.signum() && *d != 0.0);
    let growing = diffs.windows(2).all(|w| w[1].abs() >= 1.5 * w[0].abs());
    if same_sign && growing && d_last.abs() > 1e-6 * scale {
        return if d_last > 0.0 {
            (EpiClass::DivergesPlusInf, ExtReal::PlusInf)
        } else {
            (EpiClass::DivergesMinusInf, ExtReal::MinusInf)
        };
    }
    let settled = diffs.iter().rev().take(3).all(|d| d.abs() <= 1e-4 * scale);
    if settled {
        (EpiClass::FiniteLimit, ExtReal::Finite(x))
    } else {
        (EpiClass::Inconclusive, last)
    }
}

/// Numeric epi-limit of the second-order quotient at direction `w`.
pub fn epi_limit_probe(
    f: &ParamFunction,
    x: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
    sched: &TauSchedule,
) -> Result<EpiProbeEntry> {
    let dim = f.dim();
    if dim > 2 {
        return Err(Error::DimensionTooLarge(dim));
    }
    if w.len() != dim {
        return Err(Error::DimensionMismatch("probe direction".into()));
    }
    let rows: Vec<Result<TauRow>> = sched.exec.map(sched.values(), |&tau| {
        let base = quotient_base(f, x, v, tau)?;
        let slack = 1e-12 * tau * tau / (1.0 + v.amax());
        let eval = |p: &[f64]| quotient_at(f, x, v, tau, &DVector::from_column_slice(p), base, slack);
        let r = tau.sqrt();
        let bounds = |rad: f64| -> (Vec<f64>, Vec<f64>) {
            (w.iter().map(|c| c - rad).collect(), w.iter().map(|c| c + rad).collect())
        };
        let (lo, hi) = bounds(r);
        let lower = box_min(&lo, &hi, &eval);
        let (lo, hi) = bounds(0.5 * r);
        let upper = box_min(&lo, &hi, &eval).max(lower);
        Ok(TauRow {
            tau,
            lower,
            upper,
            estimate: richardson(lower, upper),
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let estimates: Vec<ExtReal> = rows.iter().map(|r| r.estimate).collect();
    let (class, value) = classify(&estimates);
    let last = rows.last().expect("nonempty schedule");
    Ok(EpiProbeEntry {
        direction: w.as_slice().to_vec(),
        lower: last.lower,
        upper: last.upper,
        value,
        class,
        rows,
    })
}

/// Probes several directions; the work inside each probe is what runs in
/// parallel, so directions are taken in order.
pub fn epi_limit_probe_many(
    f: &ParamFunction,
    x: &DVector<f64>,
    v: &DVector<f64>,
    directions: &[DVector<f64>],
    sched: &TauSchedule,
) -> Result<EpiProbeReport> {
    let entries = directions
        .iter()
        .map(|w| epi_limit_probe(f, x, v, w, sched))
        .collect::<Result<Vec<_>>>()?;
    Ok(EpiProbeReport { entries })
}
