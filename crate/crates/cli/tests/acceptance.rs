//! Acceptance run: one PASS/FAIL line per criterion. Expected values come
//! from hand derivations, closed-form branch tables and the checked-in
//! high-precision fixture, never from the engine itself.

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use protodiff_core::epi::{
    cone_k, csh_probe, d2e_closed_form, delta2_quotient, epi_limit_probe, polytope_y, Curvature, CurvatureTerm,
    DerivedSecondOrder, EpiClass, TauSchedule,
};
use protodiff_core::model::schema::ProblemSpec;
use protodiff_core::model::{
    build_problem, Constraint, ConstraintSet, ExtReal, ParamFunction, ParamOperator, ScalarPath, SmoothFn, VIProblem,
    VectorPath,
};
use protodiff_core::prox::{solve_vi, SolverParams};
use protodiff_core::sensitivity::{constrained_derivative_qp, solve_sensitivity};
use protodiff_core::validation::{
    conjugate_identity, finite_difference_derivative, phi_gap, subdiff_consistency, FDSchedule,
};

type Criterion = (&'static str, fn(&mut Tally));

/// Collects failed sub-checks of one criterion.
#[derive(Default)]
struct Tally {
    checks: usize,
    failures: Vec<String>,
}

impl Tally {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    fn close(&mut self, got: f64, want: f64, tol: f64, what: &str) {
        self.check((got - want).abs() <= tol, || format!("{what}: got {got}, want {want} (tol {tol:e})"));
    }

    fn fail(&mut self, what: impl Into<String>) {
        self.checks += 1;
        self.failures.push(what.into());
    }
}

fn s(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn example(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples").join(format!("{name}.json"))
}

fn load(name: &str) -> VIProblem {
    let text = std::fs::read_to_string(example(name)).expect("example file");
    ProblemSpec::from_json(&text).and_then(|p| p.build()).expect("example builds")
}

fn poly(c: &[f64]) -> ScalarPath {
    ScalarPath::polynomial(c)
}

fn engine_yprime(t: &mut Tally, name: &str) -> Option<DVector<f64>> {
    match solve_sensitivity(&load(name), &SolverParams::default()) {
        Ok(r) => Some(r.yprime()),
        Err(e) => {
            t.fail(format!("{name}: engine error {e}"));
            None
        }
    }
}

/// Scalar instance `c(t) y + a(t) d|y - b(t)| ∋ d(t)` with affine `a`,
/// `c`, `d` and `b'(0) = 0`, solved by hand at `t = 0`.
struct ScalarAbs {
    a: [f64; 2],
    b0: f64,
    c: [f64; 2],
    d: [f64; 2],
}

impl ScalarAbs {
    /// `(p / c)'(0)` for `p = d - sign a`.
    fn ratio_slope(&self, sign: f64) -> f64 {
        let p0 = self.d[0] - sign * self.a[0];
        let p1 = self.d[1] - sign * self.a[1];
        (p1 * self.c[0] - p0 * self.c[1]) / (self.c[0] * self.c[0])
    }

    /// Branch table for `y'(0)`.
    fn yprime(&self) -> (&'static str, f64) {
        let above = (self.d[0] - self.a[0]) / self.c[0];
        let below = (self.d[0] + self.a[0]) / self.c[0];
        let eps = 1e-12;
        if above > self.b0 + eps {
            ("above the kink", self.ratio_slope(1.0))
        } else if below < self.b0 - eps {
            ("below the kink", self.ratio_slope(-1.0))
        } else if (above - self.b0).abs() <= eps {
            ("kink, multiplier a(0)", self.ratio_slope(1.0).max(0.0))
        } else if (below - self.b0).abs() <= eps {
            ("kink, multiplier -a(0)", self.ratio_slope(-1.0).min(0.0))
        } else {
            ("kink, interior multiplier", 0.0)
        }
    }
}

fn criterion_1(t: &mut Tally) {
    let bin = env!("CARGO_BIN_EXE_protodiff");
    let out = Command::new(bin).arg("derive").arg(example("scalar_abs_above")).output();
    match out {
        Ok(o) if o.status.success() => {
            let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap_or_default();
            let y0 = v["y0"][0].as_f64().unwrap_or(f64::NAN);
            let yp = v["yprime"][0].as_f64().unwrap_or(f64::NAN);
            t.close(y0, 2.0, 1e-8, "derive y(0)");
            t.close(yp, 1.0, 1e-8, "derive y'(0)");
        }
        Ok(o) => t.fail(format!("derive exited with {:?}", o.status.code())),
        Err(e) => t.fail(format!("derive did not run: {e}")),
    }
    match finite_difference_derivative(&load("scalar_abs_above"), &SolverParams::default(), &FDSchedule::default()) {
        Ok(fd) => t.close(fd.estimate[0], 1.0, 1e-6, "finite differences"),
        Err(e) => t.fail(format!("finite differences: {e}")),
    }

    let branches = [
        ("scalar_abs_above", ScalarAbs { a: [1.0, 1.0], b0: 0.0, c: [1.0, 0.0], d: [3.0, 2.0] }),
        ("scalar_abs_upper_kink", ScalarAbs { a: [1.0, 0.0], b0: 0.0, c: [1.0, 1.0], d: [1.0, 2.0] }),
        ("scalar_abs_interior", ScalarAbs { a: [1.0, 1.0], b0: 0.0, c: [1.0, 0.0], d: [0.5, 1.0] }),
        ("scalar_abs_lower_kink", ScalarAbs { a: [1.0, 0.0], b0: 0.0, c: [1.0, 1.0], d: [-1.0, -2.0] }),
        ("scalar_abs_below", ScalarAbs { a: [1.0, 1.0], b0: 10.0, c: [2.0, 1.0], d: [1.0, 3.0] }),
    ];
    let mut seen = Vec::new();
    for (name, inst) in &branches {
        let (branch, want) = inst.yprime();
        seen.push(branch);
        if let Some(y) = engine_yprime(t, name) {
            t.close(y[0], want, 1e-8, &format!("{name} ({branch})"));
        }
    }
    seen.sort();
    seen.dedup();
    t.check(seen.len() == 5, || format!("only {} distinct branches exercised", seen.len()));
}

fn criterion_2(t: &mut Tally) {
    let sched = TauSchedule::default();
    let zero = s(0.0);
    let moving = ParamFunction::weighted_abs(ScalarPath::constant(1.0), poly(&[0.0, 1.0]));
    let expect = |t: &mut Tally, f: &ParamFunction, w: f64, class: EpiClass, label: &str| match epi_limit_probe(
        f,
        &zero,
        &zero,
        &s(w),
        &sched,
    ) {
        Ok(e) => t.check(e.class == class, || format!("{label} at w = {w}: {}", e.class.as_str())),
        Err(e) => t.fail(format!("{label} at w = {w}: {e}")),
    };
    for w in [0.5, 1.0, 1.5] {
        expect(t, &moving, w, EpiClass::DivergesMinusInf, "|x - t|");
    }
    for w in [-0.5, 2.5] {
        expect(t, &moving, w, EpiClass::DivergesPlusInf, "|x - t|");
    }
    match csh_probe(&moving, &zero, &zero, &sched) {
        Ok(r) => t.check(!r.found(), || "|x - t|: supporting hyperplane reported".into()),
        Err(e) => t.fail(format!("|x - t| csh: {e}")),
    }

    let quad = ParamFunction::weighted_abs(ScalarPath::constant(1.0), poly(&[0.0, 0.0, 1.0]));
    match epi_limit_probe(&quad, &zero, &zero, &zero, &sched) {
        Ok(e) => {
            t.check(e.class == EpiClass::FiniteLimit, || format!("|x - t^2| at 0: {}", e.class.as_str()));
            t.close(e.value.to_f64(), -1.0, 1e-3, "|x - t^2| epi-limit at 0");
        }
        Err(e) => t.fail(format!("|x - t^2| at 0: {e}")),
    }
    for w in [-0.5, 0.5] {
        expect(t, &quad, w, EpiClass::DivergesPlusInf, "|x - t^2|");
    }
    match csh_probe(&quad, &zero, &zero, &sched) {
        Ok(r) => match r.limit {
            Some([z, xi, beta]) if r.found() => {
                t.close(z, 0.0, 1e-6, "csh z");
                t.close(xi, 0.0, 1e-6, "csh slope");
                t.close(beta, -1.0, 1e-6, "csh intercept");
                // d2e f(0) = -1 from the hand computation min (|w - tau| - tau) / tau.
                t.check(beta <= -1.0 + 1e-6 && -1.0 <= 0.0, || format!("beta = {beta} above d2e f(0)"));
            }
            _ => t.fail("|x - t^2|: no supporting hyperplane"),
        },
        Err(e) => t.fail(format!("|x - t^2| csh: {e}")),
    }
}

fn probe_matches(t: &mut Tally, label: &str, f: &ParamFunction, x: f64, v: f64) {
    let closed = match d2e_closed_form(f, &s(x), &s(v)) {
        Ok(c) => c,
        Err(e) => return t.fail(format!("{label}: no closed form: {e}")),
    };
    let sched = TauSchedule::default();
    let mut finite = 0;
    for w in [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0] {
        let probe = match epi_limit_probe(f, &s(x), &s(v), &s(w), &sched) {
            Ok(p) => p,
            Err(e) => return t.fail(format!("{label} at w = {w}: {e}")),
        };
        match closed.eval(&s(w)) {
            ExtReal::Finite(c) => {
                finite += 1;
                t.check(probe.class == EpiClass::FiniteLimit && (probe.value.to_f64() - c).abs() <= 1e-3, || {
                    format!("{label} at w = {w}: closed {c}, probe {} {}", probe.value, probe.class.as_str())
                });
            }
            ExtReal::PlusInf => t.check(probe.class == EpiClass::DivergesPlusInf, || {
                format!("{label} at w = {w}: closed +inf, probe {}", probe.class.as_str())
            }),
            ExtReal::MinusInf => t.fail(format!("{label}: closed form is -inf at {w}")),
        }
    }
    t.check(finite > 0, || format!("{label}: no finite direction"));
}

fn criterion_3(t: &mut Tally) {
    let a = poly(&[1.0, 1.0]);
    probe_matches(t, "right of kink", &ParamFunction::weighted_abs(a.clone(), poly(&[0.0, 0.0, 1.0])), 1.0, 1.0);
    probe_matches(t, "left of kink", &ParamFunction::weighted_abs(a.clone(), poly(&[0.0, 0.0, 1.0])), -1.0, -1.0);
    probe_matches(t, "kink, v = a(0)", &ParamFunction::weighted_abs(a.clone(), poly(&[0.0, 0.0, 1.0])), 0.0, 1.0);
    probe_matches(t, "kink, v = -a(0)", &ParamFunction::weighted_abs(a.clone(), poly(&[0.0, 0.0, 1.0])), 0.0, -1.0);
    probe_matches(t, "kink, |v| < a(0)", &ParamFunction::weighted_abs(a, poly(&[0.0, 0.0, -1.0])), 0.0, 0.5);

    // (a(t), b''(0), v) with b(t) = b''(0) t^2 / 2.
    let triples = [
        (poly(&[1.0]), 2.0, 0.0),
        (poly(&[2.0, 1.0]), -2.0, 0.5),
        (poly(&[1.5]), 3.0, -1.0),
    ];
    for (a, b2, v) in triples {
        let a0 = a.eval(0.0);
        let want = (a0 - v) / 2.0 * b2 - a0 * b2.max(0.0);
        let f = ParamFunction::weighted_abs(a, poly(&[0.0, 0.0, b2 / 2.0]));
        match d2e_closed_form(&f, &s(0.0), &s(v)) {
            Ok(DerivedSecondOrder::PointIndicator { offset, .. }) => {
                t.check(offset == want, || format!("interior constant for a0 = {a0}, b'' = {b2}, v = {v}: {offset} vs {want}"))
            }
            Ok(other) => t.fail(format!("interior case gave {}", other.kind())),
            Err(e) => t.fail(format!("interior case: {e}")),
        }
    }
}

fn criterion_4(t: &mut Tally) {
    let p = load("halfspace_qp");
    let set = match p.function() {
        ParamFunction::ConstraintIndicator(c) => c.clone(),
        _ => return t.fail("halfspace example is not a constraint indicator"),
    };
    // Projection of (1, 1) onto x1 + x2 <= 1 by hand.
    let y0 = DVector::from_vec(vec![0.5, 0.5]);
    let v0 = DVector::from_vec(vec![0.5, 0.5]);
    let cone = match cone_k(&set, &y0, &v0) {
        Ok(c) => c,
        Err(e) => return t.fail(format!("cone: {e}")),
    };
    let inside = [[1.0, -1.0], [-2.0, 2.0], [0.0, 0.0]];
    let outside = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [-1.0, -1.0], [1.0, 1.0]];
    for w in inside {
        t.check(cone.contains(&DVector::from_row_slice(&w), 1e-12), || format!("{w:?} should lie in K"));
    }
    for w in outside {
        t.check(!cone.contains(&DVector::from_row_slice(&w), 1e-12), || format!("{w:?} should lie outside K"));
    }
    let poly_y = match polytope_y(&set, &y0, &v0) {
        Ok(y) => y,
        Err(e) => return t.fail(format!("multiplier set: {e}")),
    };
    t.check(poly_y.vertices.len() == 1, || format!("Y has {} vertices", poly_y.vertices.len()));
    if let Some(u) = poly_y.vertices.first() {
        t.check(u.len() == 1 && (u[0] - 0.5).abs() < 1e-12, || format!("Y vertex {u:?}"));
    }

    let flat = Curvature {
        terms: vec![CurvatureTerm {
            hess_xx: DMatrix::zeros(2, 2),
            hess_tx: DVector::zeros(2),
            hess_tt: 0.0,
        }],
    };
    let rhs_rate = DVector::from_vec(vec![1.0, 0.0]);
    match constrained_derivative_qp(&cone, &poly_y, &DMatrix::identity(2, 2), &(-rhs_rate), &flat) {
        Ok(x) => {
            t.close(x[0], 0.5, 1e-9, "derivative program x1");
            t.close(x[1], -0.5, 1e-9, "derivative program x2");
        }
        Err(e) => t.fail(format!("derivative program: {e}")),
    }
    match finite_difference_derivative(&p, &SolverParams::default(), &FDSchedule::default()) {
        Ok(fd) => {
            t.close(fd.estimate[0], 0.5, 1e-6, "finite differences x1");
            t.close(fd.estimate[1], -0.5, 1e-6, "finite differences x2");
        }
        Err(e) => t.fail(format!("finite differences: {e}")),
    }
}

fn criterion_5(t: &mut Tally) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/curved_fd_oracle.json");
    let fixture: serde_json::Value = match std::fs::read_to_string(&path).map(|s| serde_json::from_str(&s)) {
        Ok(Ok(v)) => v,
        _ => return t.fail("fixture unreadable"),
    };
    let want = |key: &str, i: usize| fixture[key][i].as_f64().unwrap_or(f64::NAN);
    match solve_sensitivity(&load("curved_constraint_qp"), &SolverParams::default()) {
        Ok(r) => {
            for i in 0..2 {
                t.close(r.y0[i], want("y0", i), 1e-8, &format!("y0[{i}]"));
                t.close(r.yprime[i], want("yprime", i), 1e-4, &format!("yprime[{i}]"));
            }
        }
        Err(e) => t.fail(format!("engine: {e}")),
    }
}

fn prox_lipschitz(t: &mut Tally) {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let halfspace = || {
        ParamFunction::ConstraintIndicator(ConstraintSet::new(
            2,
            vec![Constraint::quadratic(None, DVector::from_vec(vec![1.0, 1.0]), None, [-1.0, 0.0, 0.0])],
        ))
    };
    let skew = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 2.0]);
    let cases: Vec<(ParamOperator, ParamFunction, f64)> = vec![
        (ParamOperator::affine(skew, None, None, None, 1.0), halfspace(), 2.0),
        (
            ParamOperator::affine(DMatrix::from_element(1, 1, 3.0), None, None, None, 1.0),
            ParamFunction::weighted_abs(poly(&[1.0]), poly(&[0.5])),
            3.0,
        ),
    ];
    let sp = SolverParams::default().with_tol(1e-12);
    let mut pairs = 0;
    for k in 0..256 {
        let (a, f, alpha) = &cases[k % cases.len()];
        let n = a.dim();
        let mut draw = || DVector::from_fn(n, |_, _| rng.gen_range(-4.0..4.0));
        let (x1, x2) = (draw(), draw());
        let solve = |x: &DVector<f64>| {
            build_problem(a.clone(), f.clone(), VectorPath::constant(x.clone()))
                .and_then(|p| solve_vi(&p, 0.0, &sp, None))
                .map(|s| s.point())
        };
        match (solve(&x1), solve(&x2)) {
            (Ok(y1), Ok(y2)) => {
                pairs += 1;
                let (dy, dx) = ((&y1 - &y2).norm(), (&x1 - &x2).norm());
                t.check(dy <= dx / alpha + 1e-9, || format!("pair {k}: |dy| = {dy}, |dx| / alpha = {}", dx / alpha));
            }
            (Err(e), _) | (_, Err(e)) => t.fail(format!("pair {k}: {e}")),
        }
    }
    t.check(pairs == 256, || format!("{pairs} pairs solved"));
}

fn subdiff_suite(t: &mut Tally) {
    let half_line = || {
        ParamFunction::ConstraintIndicator(ConstraintSet::new(1, vec![Constraint::quadratic(None, s(-1.0), None, [0.0; 3])]))
    };
    let cases: Vec<(&str, ParamFunction, f64, f64)> = vec![
        ("(1 + t)|x - t^2|", ParamFunction::weighted_abs(poly(&[1.0, 1.0]), poly(&[0.0, 0.0, 1.0])), 1.0, 1.0),
        ("|x - t^2| at the kink", ParamFunction::weighted_abs(poly(&[1.0]), poly(&[0.0, 0.0, 1.0])), 0.0, 0.0),
        ("x^2 / 2", ParamFunction::Smooth(SmoothFn::quadratic(DMatrix::identity(1, 1), None, None, None)), 1.0, 1.0),
        ("half-line, v = 0", half_line(), 0.0, 0.0),
        ("half-line, v = -1", half_line(), 0.0, -1.0),
    ];
    for (label, f, x, v) in &cases {
        for tau in [1.0, 0.25, 2f64.powi(-10)] {
            match subdiff_consistency(f, *x, *v, tau, 33) {
                Ok(r) => t.check(r.pass, || format!("{label}, tau = {tau}: gap {:e}", r.worst_gap)),
                Err(e) => t.fail(format!("{label}, tau = {tau}: {e}")),
            }
        }
    }
}

fn static_suite(t: &mut Tally) {
    let set = ConstraintSet::new(
        2,
        vec![Constraint::quadratic(None, DVector::from_vec(vec![1.0, 1.0]), None, [-1.0, 0.0, 0.0])],
    );
    let skew = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 2.0]);
    let cases: Vec<(&str, ParamOperator, ParamFunction, DVector<f64>)> = vec![
        (
            "halfspace",
            ParamOperator::affine(skew, None, None, None, 1.0),
            ParamFunction::ConstraintIndicator(set),
            DVector::from_vec(vec![3.0, 1.0]),
        ),
        (
            "|y - 0.5|",
            ParamOperator::identity(1),
            ParamFunction::weighted_abs(poly(&[1.0]), poly(&[0.5])),
            s(0.8),
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (label, a, f, x) in cases {
        let p = match build_problem(a, f, VectorPath::constant(x)) {
            Ok(p) => p,
            Err(e) => return t.fail(format!("{label}: {e}")),
        };
        let r = match solve_sensitivity(&p, &SolverParams::default()) {
            Ok(r) => r,
            Err(e) => return t.fail(format!("{label}: {e}")),
        };
        t.check(r.yprime().amax() <= 1e-10, || format!("{label}: y'(0) = {:?}", r.yprime));
        let (y0, v0) = (DVector::from_vec(r.y0.clone()), DVector::from_vec(r.v0.clone()));
        for tau in [0.5, 0.1, 1e-3] {
            match delta2_quotient(p.function(), &y0, &v0, tau, &DVector::zeros(p.dim())) {
                Ok(q) => t.check(q.to_f64().abs() <= 1e-12, || format!("{label}: quotient at 0 is {q}")),
                Err(e) => t.fail(format!("{label}: {e}")),
            }
            for _ in 0..32 {
                let w = DVector::from_fn(p.dim(), |_, _| rng.gen_range(-3.0..3.0));
                match delta2_quotient(p.function(), &y0, &v0, tau, &w) {
                    Ok(q) => t.check(q.to_f64() >= -1e-9, || format!("{label}: quotient {q} at {w:?}")),
                    Err(e) => t.fail(format!("{label}: {e}")),
                }
            }
        }
    }
}

fn phi_suite(t: &mut Tally) {
    let ts: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let abs_minus = |b: &[f64]| ParamFunction::weighted_abs(ScalarPath::constant(1.0), poly(b));
    match phi_gap(&abs_minus(&[0.0, 0.0, 1.0]), 0.0, 0.0, &ts) {
        Ok(r) => {
            let worst = r.samples.iter().map(|&(t, p)| (p - t * t).abs()).fold(0.0, f64::max);
            t.check(worst <= 1e-12, || format!("Phi(t) = t^2 off by {worst:e}"));
            t.check(r.hypothesis_holds && r.nonnegative, || "t^2 gap flags".into());
        }
        Err(e) => t.fail(format!("t^2 gap: {e}")),
    }
    match phi_gap(&abs_minus(&[0.0, 1.0]), 0.0, 0.0, &ts) {
        Ok(r) => {
            let worst = r.samples.iter().map(|&(t, p)| (p - t).abs()).fold(0.0, f64::max);
            t.check(worst <= 1e-12, || format!("Phi(t) = t off by {worst:e}"));
            t.check(!r.hypothesis_holds && r.nonnegative, || "t gap flags".into());
        }
        Err(e) => t.fail(format!("t gap: {e}")),
    }
    match conjugate_identity(&abs_minus(&[0.0, 0.0, 1.0]), 0.0, 0.0) {
        Ok(r) => t.check(r.max_gap <= 1e-6, || format!("conjugate identity gap {:e}", r.max_gap)),
        Err(e) => t.fail(format!("conjugate identity: {e}")),
    }
}

fn criterion_6(t: &mut Tally) {
    prox_lipschitz(t);
    subdiff_suite(t);
    static_suite(t);
    phi_suite(t);
}

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("scalar closed form and branch table", criterion_1),
        ("moving-kink counterexamples", criterion_2),
        ("weighted-abs second-order cases", criterion_3),
        ("halfspace derivative program", criterion_4),
        ("curved constraint vs fixture", criterion_5),
        ("identity and property suites", criterion_6),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut tally = Tally::default();
        run(&mut tally);
        let secs = start.elapsed().as_secs_f64();
        if tally.failures.is_empty() {
            println!("PASS criterion {}: {name} ({} checks, {secs:.2}s)", i + 1, tally.checks);
        } else {
            failed += 1;
            println!(
                "FAIL criterion {}: {name} ({}/{} checks failed, {secs:.2}s): {}",
                i + 1,
                tally.failures.len(),
                tally.checks,
                tally.failures.join("; ")
            );
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
