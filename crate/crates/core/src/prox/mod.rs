//! Moreau prox oracles and the fixed-point solver for the inequality at a
//! fixed parameter value.

pub mod nonlinear;
pub mod polyhedron;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::function::{ConstraintSet, ParamFunction, SmoothFn, WeightedAbs};
use crate::model::problem::{VIProblem, DEFAULT_SEED};

pub use nonlinear::project_convex_set;
pub use polyhedron::{enumerate_projection, project_polyhedron, project_polyhedron_eq};

const PROX_PROBES: usize = 8;
const VI_PROBES: usize = 16;
const PROBE_SEED: u64 = 0x9e37_79b9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    /// Relaxation step; `None` means `alpha / M^2`.
    pub rho: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Seed for the post-solve probe points.
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            rho: None,
            tol: 1e-10,
            max_iter: 100_000,
            seed: DEFAULT_SEED,
        }
    }
}

impl SolverParams {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = Some(rho);
        self
    }

    /// Step for an operator with constants `alpha` and `m`, checked against
    /// the contraction interval `(0, 2 alpha / m^2)`.
    pub fn step(&self, alpha: f64, m: f64) -> Result<f64> {
        let rho = self.rho.unwrap_or(alpha / (m * m));
        if !(rho > 0.0 && rho < 2.0 * alpha / (m * m)) {
            return Err(Error::InvalidParameter(format!(
                "rho = {rho} is outside (0, {})",
                2.0 * alpha / (m * m)
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(rho)
    }
}

/// Bound on the contraction factor of `y -> prox(y - rho (A(y) - x))`.
pub fn contraction_factor(rho: f64, alpha: f64, m: f64) -> f64 {
    (1.0 - 2.0 * rho * alpha + rho * rho * m * m).max(0.0).sqrt()
}

/// Minimizer of `f(t, .) + |. - x|^2 / (2 rho)`, verified with the
/// subgradient inequality at probe points.
pub fn moreau_prox(f: &ParamFunction, t: f64, x: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    let y = prox_unchecked(f, t, x, rho)?;
    let worst = prox_violation(f, t, x, &y, rho)?;
    if worst > 0.0 {
        let msg = format!("subgradient inequality fails by {worst:e} at a probe");
        return Err(match f {
            ParamFunction::Custom(_) => Error::OracleInconsistent(msg),
            _ => Error::SubproblemDiverged(msg),
        });
    }
    Ok(y)
}

pub(crate) fn prox_unchecked(f: &ParamFunction, t: f64, x: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    if x.len() != f.dim() {
        return Err(Error::DimensionMismatch(format!(
            "prox point has length {}, function dimension {}",
            x.len(),
            f.dim()
        )));
    }
    match f {
        ParamFunction::Smooth(g) => smooth_prox(g, t, x, rho),
        ParamFunction::WeightedAbs(w) => Ok(DVector::from_element(1, weighted_abs_prox(w, t, x[0], rho))),
        ParamFunction::ConstraintIndicator(c) => project_onto_constraints(c, t, x),
        ParamFunction::Custom(c) => {
            let oracle = c.prox().ok_or(Error::MissingProxOracle)?;
            Ok(oracle(t, x, rho))
        }
    }
}

/// Shifted soft threshold: `b + sign(x - b) max(|x - b| - rho a, 0)`.
pub fn weighted_abs_prox(w: &WeightedAbs, t: f64, x: f64, rho: f64) -> f64 {
    let a = w.a.eval(t);
    let b = w.b.eval(t);
    let r = x - b;
    let k = rho * a;
    if r > k {
        x - k
    } else if r < -k {
        x + k
    } else {
        b
    }
}

/// Damped Newton on `g(t, y) + |y - x|^2 / (2 rho)`.
fn smooth_prox(g: &SmoothFn, t: f64, x: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    let n = x.len();
    let phi = |y: &DVector<f64>| g.value(t, y) + (y - x).norm_squared() / (2.0 * rho);
    let mut y = x.clone();
    for _ in 0..100 {
        let grad = g.grad_x(t, &y) + (&y - x) / rho;
        if grad.amax() <= 1e-13 * (1.0 + x.amax() / rho) {
            return Ok(y);
        }
        let h = g.hess_xx(t, &y) + nalgebra::DMatrix::identity(n, n) / rho;
        let step = h
            .cholesky()
            .map(|c| c.solve(&-&grad))
            .ok_or_else(|| Error::SubproblemDiverged("prox Hessian is not positive definite".into()))?;
        let f0 = phi(&y);
        let slope = grad.dot(&step);
        let mut s = 1.0;
        while phi(&(&y + &step * s)) > f0 + 1e-4 * s * slope && s > 1e-12 {
            s *= 0.5;
        }
        y += step * s;
    }
    let grad = g.grad_x(t, &y) + (&y - x) / rho;
    if grad.amax() <= 1e-10 * (1.0 + x.amax() / rho) {
        Ok(y)
    } else {
        Err(Error::SubproblemDiverged(format!("Newton stalled, gradient {:e}", grad.amax())))
    }
}

/// Euclidean projection onto `C(t)`.
pub fn project_onto_constraints(c: &ConstraintSet, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    if c.is_affine() {
        let (m, q) = c.linear_rows(t);
        project_polyhedron(&m, &q, x)
    } else {
        project_convex_set(c, t, x, 1e-12).map(|(z, _)| z)
    }
}

fn probe_points(y: &DVector<f64>, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 + y.amax();
    (0..count)
        .map(|k| {
            let r = scale * 2f64.powi(-(k as i32 % 4));
            y + DVector::from_fn(y.len(), |_, _| rng.gen_range(-r..=r))
        })
        .collect()
}

/// Moves a probe into the domain where `f` is an indicator.
fn domain_probe(f: &ParamFunction, t: f64, z: DVector<f64>) -> Result<DVector<f64>> {
    match f {
        ParamFunction::ConstraintIndicator(c) => project_onto_constraints(c, t, &z),
        _ => Ok(z),
    }
}

/// Largest excess of `f(y) + <xi, z - y> - f(z)` over its tolerance, with
/// `xi = (x - y) / rho`; zero or negative means every probe passed.
fn prox_violation(f: &ParamFunction, t: f64, x: &DVector<f64>, y: &DVector<f64>, rho: f64) -> Result<f64> {
    let xi = (x - y) / rho;
    let fy = f.eval_relaxed(t, y);
    let Some(fy) = fy.finite() else {
        return Ok(f64::INFINITY);
    };
    let mut worst = f64::NEG_INFINITY;
    for z in probe_points(y, PROX_PROBES, PROBE_SEED) {
        let z = domain_probe(f, t, z)?;
        let fz = f.eval_relaxed(t, &z).to_f64();
        let d = &z - y;
        let tol = 1e-8 * (1.0 + fy.abs() + xi.norm() * d.norm());
        worst = worst.max(fy + xi.dot(&d) - fz - tol);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct ViSolution {
    pub y: Vec<f64>,
    pub iterations: usize,
    pub rho: f64,
    pub contraction_bound: f64,
    /// `|y_{k+1} - y_k|` for every iterate.
    #[serde(skip)]
    pub residuals: Vec<f64>,
    /// Worst slack of the inequality over the probe points (negative is fine).
    pub vi_violation: f64,
}

impl ViSolution {
    pub fn point(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }
}

pub fn solve_vi_at_t(p: &VIProblem, t: f64, sp: &SolverParams) -> Result<DVector<f64>> {
    solve_vi(p, t, sp, None).map(|s| s.point())
}

/// Iterates `y <- prox_{rho f(t)}(y - rho (A(t, y) - x(t)))` to the fixed point.
pub fn solve_vi(p: &VIProblem, t: f64, sp: &SolverParams, init: Option<&DVector<f64>>) -> Result<ViSolution> {
    if !(0.0..=p.t_max()).contains(&t) {
        return Err(Error::InvalidParameter(format!("t = {t} is outside [0, {}]", p.t_max())));
    }
    let a = p.operator();
    let f = p.function();
    let rho = sp.step(a.strong_mono(), a.lipschitz())?;
    let xt = p.rhs().eval(t);
    let mut y = init.cloned().unwrap_or_else(|| xt.clone());
    if y.len() != p.dim() {
        return Err(Error::DimensionMismatch("initial guess".into()));
    }
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..sp.max_iter {
        let arg = &y - (a.eval(t, &y) - &xt) * rho;
        let next = prox_unchecked(f, t, &arg, rho)?;
        let r = (&next - &y).norm();
        residuals.push(r);
        y = next;
        if r <= sp.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::MaxIterExceeded {
            max_iter: sp.max_iter,
            residual: residuals.last().copied().unwrap_or(f64::NAN),
        });
    }

    let ay = a.eval(t, &y);
    let fy = f.eval_relaxed(t, &y).finite().ok_or(Error::XNotInDomain)?;
    let scale = 1.0 + ay.norm() + xt.norm();
    let mut worst = f64::NEG_INFINITY;
    for z in probe_points(&y, VI_PROBES, sp.seed) {
        let z = domain_probe(f, t, z)?;
        let d = &z - &y;
        let fz = f.eval_relaxed(t, &z).to_f64();
        let slack = (&ay - &xt).dot(&d) + fz - fy;
        let tol = 1e-8 * (1.0 + scale * d.norm() + fy.abs());
        worst = worst.max(-slack - tol);
    }
    if worst > 0.0 {
        return Err(Error::SubproblemDiverged(format!(
            "variational inequality fails by {worst:e} at a probe point"
        )));
    }
    Ok(ViSolution {
        y: y.as_slice().to_vec(),
        iterations: residuals.len(),
        rho,
        contraction_bound: contraction_factor(rho, a.strong_mono(), a.lipschitz()),
        residuals,
        vi_violation: worst,
    })
}
