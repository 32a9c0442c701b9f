use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::extreal::ExtReal;
use crate::model::function::ParamFunction;
use crate::model::operator::ParamOperator;
use crate::model::path::VectorPath;

pub const DEFAULT_SEED: u64 = 0x5eed_0001;

/// Settings for the randomized construction-time audit.
#[derive(Debug, Clone, Copy)]
pub struct AuditConfig {
    pub seed: u64,
    pub samples: usize,
    /// Sample points are drawn from the box `[-radius, radius]^n`.
    pub radius: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            samples: 64,
            radius: 4.0,
        }
    }
}

/// Find `y` with `<A(t,y), z-y> + f(t,z) - f(t,y) >= <x(t), z-y>` for all `z`.
#[derive(Debug, Clone)]
pub struct VIProblem {
    operator: ParamOperator,
    function: ParamFunction,
    rhs: VectorPath,
}

impl VIProblem {
    pub fn operator(&self) -> &ParamOperator {
        &self.operator
    }

    pub fn function(&self) -> &ParamFunction {
        &self.function
    }

    pub fn rhs(&self) -> &VectorPath {
        &self.rhs
    }

    pub fn dim(&self) -> usize {
        self.rhs.dim()
    }

    pub fn t_max(&self) -> f64 {
        self.rhs.t_max()
    }
}

pub fn build_problem(a: ParamOperator, f: ParamFunction, x: VectorPath) -> Result<VIProblem> {
    build_problem_with(a, f, x, &AuditConfig::default())
}

pub fn build_problem_with(
    a: ParamOperator,
    f: ParamFunction,
    x: VectorPath,
    cfg: &AuditConfig,
) -> Result<VIProblem> {
    let n = x.dim();
    if a.dim() != n || f.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "operator has dimension {}, function {}, path {}",
            a.dim(),
            f.dim(),
            n
        )));
    }
    if let ParamFunction::Custom(c) = &f {
        if c.prox().is_none() {
            return Err(Error::MissingProxOracle);
        }
    }
    let p = VIProblem {
        operator: a,
        function: f,
        rhs: x,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    audit_operator(&p, cfg, &mut rng)?;
    audit_function(&p, cfg, &mut rng)?;
    Ok(p)
}

fn random_point(n: usize, radius: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-radius..=radius))
}

fn fmt_vec(v: &DVector<f64>) -> String {
    format!("{:?}", v.as_slice())
}

fn audit_operator(p: &VIProblem, cfg: &AuditConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let a = &p.operator;
    let (m, alpha) = (a.lipschitz(), a.strong_mono());
    if !(alpha > 0.0) {
        return Err(Error::AuditFailed(format!(
            "strong monotonicity constant must be positive, got {alpha}"
        )));
    }
    if !(m.is_finite() && alpha <= m * (1.0 + 1e-12)) {
        return Err(Error::AuditFailed(format!(
            "need alpha <= M, got alpha = {alpha}, M = {m}"
        )));
    }
    let n = p.dim();
    for _ in 0..cfg.samples {
        let t = rng.gen_range(0.0..=p.t_max());
        let y1 = random_point(n, cfg.radius, rng);
        let y2 = random_point(n, cfg.radius, rng);
        let d = &y2 - &y1;
        let da = a.eval(t, &y2) - a.eval(t, &y1);
        let dn = d.norm();
        let slack = 1e-9 * m * dn * dn + 1e-12;
        if da.norm() > m * dn * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::AuditFailed(format!(
                "Lipschitz bound violated at t = {t}, y1 = {}, y2 = {}: |A(y2) - A(y1)| = {} > M |y2 - y1| = {}",
                fmt_vec(&y1),
                fmt_vec(&y2),
                da.norm(),
                m * dn
            )));
        }
        if da.dot(&d) < alpha * dn * dn - slack {
            return Err(Error::AuditFailed(format!(
                "monotonicity violated at t = {t}, y1 = {}, y2 = {}: <A(y2) - A(y1), y2 - y1> = {} < alpha |y2 - y1|^2 = {}",
                fmt_vec(&y1),
                fmt_vec(&y2),
                da.dot(&d),
                alpha * dn * dn
            )));
        }
    }
    Ok(())
}

fn audit_function(p: &VIProblem, cfg: &AuditConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let f = &p.function;
    let n = p.dim();
    let t_max = p.t_max();
    if let ParamFunction::WeightedAbs(w) = f {
        for k in 0..=cfg.samples {
            let t = t_max * k as f64 / cfg.samples as f64;
            let a = w.a.eval(t);
            if !(a > 0.0) {
                return Err(Error::AuditFailed(format!("weight a(t) = {a} is not positive at t = {t}")));
            }
        }
    }
    let mut any_finite = false;
    for _ in 0..cfg.samples {
        let t = rng.gen_range(0.0..=t_max);
        let z1 = random_point(n, cfg.radius, rng);
        let z2 = random_point(n, cfg.radius, rng);
        let mid = (&z1 + &z2) * 0.5;
        let (f1, f2, fm) = (f.eval(t, &z1), f.eval(t, &z2), f.eval(t, &mid));
        for (z, val) in [(&z1, f1), (&z2, f2), (&mid, fm)] {
            if val == ExtReal::MinusInf {
                return Err(Error::AuditFailed(format!(
                    "f(t, z) = -inf at t = {t}, z = {}",
                    fmt_vec(z)
                )));
            }
        }
        if let (Some(a), Some(b)) = (f1.finite(), f2.finite()) {
            any_finite = true;
            let bound = 0.5 * (a + b);
            let m = fm.to_f64();
            if m > bound + 1e-9 * (1.0 + a.abs() + b.abs()) {
                return Err(Error::AuditFailed(format!(
                    "midpoint convexity violated at t = {t}, z1 = {}, z2 = {}: f(mid) = {m} > {bound}",
                    fmt_vec(&z1),
                    fmt_vec(&z2)
                )));
            }
        }
    }
    match f {
        ParamFunction::ConstraintIndicator(c) => {
            for t in [0.0, 0.5 * t_max, t_max] {
                crate::prox::project_onto_constraints(c, t, &DVector::zeros(n)).map_err(|e| {
                    Error::AuditFailed(format!("constraint set is empty at t = {t}: {e}"))
                })?;
            }
            any_finite = true;
        }
        ParamFunction::Custom(c) => {
            let oracle = c.prox().expect("checked above");
            let z = oracle(0.0, &DVector::zeros(n), 1.0);
            any_finite |= f.eval(0.0, &z).is_finite();
        }
        _ => {}
    }
    if !any_finite {
        return Err(Error::AuditFailed("f has no finite sample (not proper)".into()));
    }
    Ok(())
}
