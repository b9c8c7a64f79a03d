//! `quench`: command-line driver for simulation, certificates, adjoints and
//! control search.
//!
//! Exit codes: 0 success, 1 a certificate failed, 2 invalid input,
//! 3 integration failure.

mod output;
mod problem;
mod suites;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use quench_core::analysis::{
    check_f3_ratio, check_invariant_region, check_monotone_approach, check_quench_bound,
    check_rate_estimate, AnalysisError,
};
use quench_core::controls::ControlError;
use quench_core::integrator::{integrate_to_quench, IntegratorError};
use quench_core::optimizer::{search, OptimizerError};
use quench_core::pmp::{
    default_epsilon, integrate_adjoint, pmp_certificate, PmpError, DEFAULT_RESIDUAL_TOL,
};
use quench_core::{CertificateReport, FieldKind, Method, Trajectory};
use serde_json::json;
use thiserror::Error;

use problem::ProblemFile;
use suites::Suite;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Integration(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Integration(_) => 3,
        }
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<IntegratorError> for CliError {
    fn from(e: IntegratorError) -> Self {
        match e {
            IntegratorError::InvalidConfig(_)
            | IntegratorError::Control(_)
            | IntegratorError::OutOfWindow { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Integration(e.to_string()),
        }
    }
}

impl From<PmpError> for CliError {
    fn from(e: PmpError) -> Self {
        match e {
            PmpError::Integrator(inner) => inner.into(),
            PmpError::NoQuench | PmpError::Field(_) => CliError::Integration(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Integrator(inner) => inner.into(),
            OptimizerError::Pmp(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::ParamOutOfRange(_) | AnalysisError::WrongField { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Integration(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "quench",
    version,
    about = "Quenching times and time-optimal controls for singular planar ODEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ProblemArgs {
    /// Problem file (JSON).
    #[arg(long)]
    problem: PathBuf,
    /// Override the integrator's relative tolerance.
    #[arg(long)]
    rtol: Option<f64>,
    /// Override the integrator's absolute tolerance.
    #[arg(long)]
    atol: Option<f64>,
    /// Override the stopping distance to the singular set.
    #[arg(long)]
    delta: Option<f64>,
}

impl ProblemArgs {
    fn load(&self) -> Result<ProblemFile, CliError> {
        let mut file = ProblemFile::load(&self.problem)?;
        if let Some(v) = self.rtol {
            file.integrator.rtol = v;
        }
        if let Some(v) = self.atol {
            file.integrator.atol = v;
        }
        if let Some(v) = self.delta {
            file.integrator.delta_stop = v;
        }
        file.integrator().validate()?;
        Ok(file)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Integrate to the quench; write the trajectory CSV and print the estimate.
    Simulate {
        #[command(flatten)]
        args: ProblemArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the quench-time estimate, its bracket and the analytic bound.
    QuenchTime {
        #[command(flatten)]
        args: ProblemArgs,
    },
    /// Check the estimate against the analytic bound.
    Bounds {
        #[command(flatten)]
        args: ProblemArgs,
    },
    /// Invariant-region, monotone-approach, rate and (f3) ratio certificates.
    Invariants {
        #[command(flatten)]
        args: ProblemArgs,
    },
    /// Regularized adjoint along the file's control, with its certificate.
    Adjoint {
        #[command(flatten)]
        args: ProblemArgs,
        /// Regularization; overrides the file and the default.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for a faster control.
    Optimize {
        #[command(flatten)]
        args: ProblemArgs,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a seeded property suite.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn parallel_enabled() -> bool {
    std::env::var("QUENCH_NO_PARALLEL").map_or(true, |v| v != "1")
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

fn echo_value(file: &ProblemFile) -> serde_json::Value {
    serde_json::to_value(file).expect("problem files always serialize")
}

fn simulate(file: &ProblemFile) -> Result<Trajectory, CliError> {
    let p = file.problem()?;
    let u = file.control()?;
    Ok(integrate_to_quench(&p, &u, &file.integrator())?)
}

fn print_reports(reports: &[CertificateReport]) -> bool {
    for r in reports {
        println!("{}", serde_json::to_string(r).expect("reports serialize"));
    }
    reports.iter().all(|r| r.passed)
}

/// Runs a command; `Ok(false)` means it completed but a certificate failed.
fn run(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Simulate { args, out } => {
            let file = args.load()?;
            let traj = simulate(&file)?;
            if let Some(path) = out {
                write_file(&path, &output::trajectory_csv(&traj))?;
            }
            let mut v = output::quench_json(&file.problem()?, &traj);
            v["problem"] = echo_value(&file);
            println!("{v}");
            Ok(true)
        }
        Command::QuenchTime { args } => {
            let file = args.load()?;
            let traj = simulate(&file)?;
            println!("{}", output::quench_json(&file.problem()?, &traj));
            Ok(true)
        }
        Command::Bounds { args } => {
            let file = args.load()?;
            let traj = simulate(&file)?;
            Ok(print_reports(&[check_quench_bound(&traj)?]))
        }
        Command::Invariants { args } => {
            let file = args.load()?;
            let traj = simulate(&file)?;
            let mut reports = vec![
                check_invariant_region(&traj, &file.region)?,
                check_monotone_approach(&traj),
                check_rate_estimate(&traj)?,
            ];
            if file.field == FieldKind::F3 {
                reports.push(check_f3_ratio(&traj)?);
            }
            Ok(print_reports(&reports))
        }
        Command::Adjoint { args, epsilon, out } => {
            let file = args.load()?;
            let traj = simulate(&file)?;
            let t_hat = traj.t_hat().expect("quenched");
            let eps = epsilon
                .or(file.epsilon)
                .unwrap_or_else(|| default_epsilon(t_hat, file.integrator.delta_stop));
            let adj = integrate_adjoint(&traj, eps)?;
            let cert = pmp_certificate(&traj, &traj.control, &adj, DEFAULT_RESIDUAL_TOL)?;
            if let Some(path) = out {
                write_file(&path, &output::adjoint_csv(&adj))?;
            }
            let v = json!({
                "t_hat": t_hat,
                "epsilon": eps,
                "terminal_time": adj.terminal_time,
                "decay_constant": adj.decay_constant,
                "certificate": output::certificate_json(&cert),
            });
            println!("{v}");
            Ok(true)
        }
        Command::Optimize {
            args,
            method,
            seed,
            out,
        } => {
            let file = args.load()?;
            let p = file.problem()?;
            let mut cfg = file.search(parallel_enabled());
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let result = search(&p, &cfg)?;
            if let Some(w) = &result.warning {
                eprintln!("warning: {w}");
            }
            let v = output::search_json(&result);
            let text = serde_json::to_string_pretty(&v).expect("json values serialize") + "\n";
            match out {
                Some(path) => write_file(&path, &text)?,
                None => print!("{text}"),
            }
            Ok(true)
        }
        Command::Verify { suite, seed } => {
            Ok(print_reports(&suites::run(suite, seed, parallel_enabled())))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
