use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use thiserror::Error;

use protodiff_core::epi::{csh_probe, epi_limit_probe_many, TauSchedule};
use protodiff_core::model::problem::{AuditConfig, DEFAULT_SEED};
use protodiff_core::model::schema::{LoadError, ProblemSpec};
use protodiff_core::model::VIProblem;
use protodiff_core::prox::{solve_vi, SolverParams};
use protodiff_core::sensitivity::solve_sensitivity;
use protodiff_core::validation::{
    finite_difference_derivative, record_crosscheck, verify_theorem, FDSchedule, VerifyStatus,
};
use protodiff_core::{Error, Exec};

const EXIT_IO: u8 = 1;
const EXIT_MISMATCH: u8 = 2;
const EXIT_HYPOTHESIS: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "protodiff", version, about = "Solve and differentiate parameterized variational inequalities")]
struct Cli {
    /// Seed for the construction audit and solver probes.
    #[arg(long, global = true, env = "PROTODIFF_SEED")]
    seed: Option<u64>,
    /// Run sweeps on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the solution y(T).
    Solve {
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        at: f64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Print the sensitivity report with y'(0).
    Derive {
        input: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Also run finite differences and record the gap.
        #[arg(long)]
        crosscheck: bool,
        #[command(flatten)]
        fd: FdArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compare y'(0) from the engine with finite differences.
    Validate {
        input: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        fd: FdArgs,
        /// Allowed gap on top of the finite-difference error estimate.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// JSON report; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Per-component CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Finite-difference quotients per step.
        #[arg(long)]
        fd_csv: Option<PathBuf>,
    },
    /// Numeric epi-limits of the second-order quotient, written as CSV.
    Probe {
        input: PathBuf,
        /// Base point; the solution at t = 0 when absent.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x: Option<Vec<f64>>,
        /// Subgradient; x(0) - A(0, y0) when absent.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        v: Option<Vec<f64>>,
        /// Direction, comma separated; repeat for several.
        #[arg(long = "dir", allow_negative_numbers = true)]
        dirs: Vec<String>,
        /// Smallest and largest k in tau = 2^-k.
        #[arg(long, default_value_t = 1)]
        tau_k_min: i32,
        #[arg(long, default_value_t = 20)]
        tau_k_max: i32,
        #[command(flatten)]
        solver: SolverArgs,
        /// One row per direction; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// One row per direction and tau.
        #[arg(long)]
        tau_csv: Option<PathBuf>,
        /// Supporting hyperplane rows (dimension 1 only).
        #[arg(long)]
        csh_csv: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long)]
    solver_tol: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Debug, Args)]
struct FdArgs {
    #[arg(long, default_value_t = 0.1)]
    fd_h: f64,
    #[arg(long, default_value_t = 10)]
    fd_levels: usize,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{file}: {source}")]
    Load { file: String, source: LoadError },
    #[error("{file}: {source}")]
    Io { file: String, source: io::Error },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Load { source: LoadError::Problem(e), .. } | CliError::Core(e) => numeric_code(e),
            _ => EXIT_IO,
        }
    }
}

fn numeric_code(e: &Error) -> u8 {
    match e {
        Error::HypothesisViolated(_) => EXIT_HYPOTHESIS,
        _ => EXIT_NUMERIC,
    }
}

struct Context {
    seed: u64,
    exec: Exec,
}

impl Context {
    fn load(&self, input: &Path) -> Result<VIProblem, CliError> {
        let file = input.display().to_string();
        let text = std::fs::read_to_string(input).map_err(|source| CliError::Io { file: file.clone(), source })?;
        let audit = AuditConfig {
            seed: self.seed,
            ..AuditConfig::default()
        };
        ProblemSpec::from_json(&text)
            .and_then(|s| s.build_with(&audit))
            .map_err(|source| CliError::Load { file, source })
    }

    fn solver(&self, a: &SolverArgs) -> SolverParams {
        let mut sp = SolverParams {
            seed: self.seed,
            rho: a.rho,
            ..SolverParams::default()
        };
        if let Some(tol) = a.solver_tol {
            sp.tol = tol;
        }
        if let Some(n) = a.max_iter {
            sp.max_iter = n;
        }
        sp
    }

    fn fd(&self, a: &FdArgs) -> Result<FDSchedule, CliError> {
        Ok(FDSchedule::new(a.fd_h, a.fd_levels)?.with_exec(self.exec))
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => File::create(p)
            .map(|f| Box::new(BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|source| CliError::Io {
                file: p.display().to_string(),
                source,
            }),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    let mut out = sink(path)?;
    writeln!(out, "{text}")
        .and_then(|_| out.flush())
        .map_err(|source| CliError::Io {
            file: path.map_or("stdout".into(), |p| p.display().to_string()),
            source,
        })
}

fn parse_dir(s: &str, dim: usize) -> Result<DVector<f64>, CliError> {
    let vals = s
        .split(',')
        .map(|c| c.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("--dir {s}: {e}")))?;
    if vals.len() != dim {
        return Err(CliError::Usage(format!("--dir {s}: expected {dim} components")));
    }
    Ok(DVector::from_vec(vals))
}

fn default_dirs(dim: usize) -> Vec<DVector<f64>> {
    let ticks = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
    match dim {
        1 => ticks.iter().map(|&w| DVector::from_element(1, w)).collect(),
        _ => ticks
            .iter()
            .flat_map(|&a| ticks.iter().map(move |&b| DVector::from_vec(vec![a, b])))
            .collect(),
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let ctx = Context {
        seed: cli.seed.unwrap_or(DEFAULT_SEED),
        exec: if cli.sequential { Exec::Sequential } else { Exec::default() },
    };
    match cli.command {
        Command::Solve { input, at, solver } => {
            let p = ctx.load(&input)?;
            let sol = solve_vi(&p, at, &ctx.solver(&solver), None)?;
            let out = serde_json::json!({
                "t": at,
                "y": sol.y,
                "iterations": sol.iterations,
                "rho": sol.rho,
                "contraction_bound": sol.contraction_bound,
            });
            emit(None, &out.to_string())?;
            Ok(0)
        }
        Command::Derive {
            input,
            solver,
            crosscheck,
            fd,
            output,
        } => {
            let p = ctx.load(&input)?;
            let sp = ctx.solver(&solver);
            match solve_sensitivity(&p, &sp) {
                Ok(mut report) => {
                    if crosscheck {
                        let est = finite_difference_derivative(&p, &sp, &ctx.fd(&fd)?)?;
                        record_crosscheck(&mut report, &est);
                    }
                    emit(output.as_deref(), &report.to_json())?;
                    Ok(0)
                }
                Err(Error::HypothesisViolated(checks)) => {
                    let out = serde_json::json!({ "status": "HYPOTHESIS_VIOLATED", "hypotheses": checks });
                    emit(output.as_deref(), &serde_json::to_string_pretty(&out).expect("json value"))?;
                    Ok(EXIT_HYPOTHESIS)
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Validate {
            input,
            solver,
            fd,
            tol,
            output,
            csv,
            fd_csv,
        } => {
            let p = ctx.load(&input)?;
            let report = verify_theorem(&p, &ctx.solver(&solver), &ctx.fd(&fd)?, tol);
            emit(output.as_deref(), &report.to_json())?;
            if let Some(path) = csv {
                report.write_csv(sink(Some(&path))?)?;
            }
            if let (Some(path), Some(est)) = (fd_csv, &report.fd) {
                est.write_csv(sink(Some(&path))?)?;
            }
            Ok(match report.status {
                VerifyStatus::Pass => 0,
                VerifyStatus::Mismatch => EXIT_MISMATCH,
                VerifyStatus::HypothesisViolated => EXIT_HYPOTHESIS,
            })
        }
        Command::Probe {
            input,
            x,
            v,
            dirs,
            tau_k_min,
            tau_k_max,
            solver,
            output,
            tau_csv,
            csh_csv,
        } => {
            let p = ctx.load(&input)?;
            let n = p.dim();
            let vec_arg = |name: &str, vals: Vec<f64>| {
                if vals.len() == n {
                    Ok(DVector::from_vec(vals))
                } else {
                    Err(CliError::Usage(format!("--{name}: expected {n} components")))
                }
            };
            let x = match x {
                Some(vals) => vec_arg("x", vals)?,
                None => solve_vi(&p, 0.0, &ctx.solver(&solver), None)?.point(),
            };
            let v = match v {
                Some(vals) => vec_arg("v", vals)?,
                None => p.rhs().eval(0.0) - p.operator().eval(0.0, &x),
            };
            if tau_k_min > tau_k_max {
                return Err(CliError::Usage("--tau-k-min exceeds --tau-k-max".into()));
            }
            let sched = TauSchedule::geometric(tau_k_min, tau_k_max).with_exec(ctx.exec);
            let directions = if dirs.is_empty() {
                default_dirs(n)
            } else {
                dirs.iter().map(|d| parse_dir(d, n)).collect::<Result<_, _>>()?
            };
            let report = epi_limit_probe_many(p.function(), &x, &v, &directions, &sched)?;
            report.write_csv(sink(output.as_deref())?)?;
            if let Some(path) = tau_csv {
                report.write_tau_csv(sink(Some(&path))?)?;
            }
            if let Some(path) = csh_csv {
                csh_probe(p.function(), &x, &v, &sched)?.write_csv(sink(Some(&path))?)?;
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    // Exit codes 2 and 3 carry validation outcomes, so usage errors map to 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_IO } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("protodiff: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
