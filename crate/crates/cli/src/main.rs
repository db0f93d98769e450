//! `optflow`: run scenarios, certify connectivity, execute acceptance
//! suites and generate scenario files.
//!
//! Exit codes: 0 success, 1 requested condition or suite check failed,
//! 2 invalid input or failed validation, 3 intersection oracle failure,
//! 4 invariant monitor fired.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use exit::Failure;

#[derive(Debug, Parser)]
#[command(name = "optflow", version, about = "Distributed optimal-consensus flow simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate, certify, simulate and measure a scenario.
    Run(RunArgs),
    /// Check joint connectivity of a scenario's switching signal.
    Certify(CertifyArgs),
    /// Run a named acceptance suite and write its scorecard.
    Suite(SuiteArgs),
    /// Write a generated scenario file.
    Gen(GenArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, env = "OPTFLOW_OUT_DIR", default_value = "optflow-out")]
    out: PathBuf,
    /// Simulate even when neither connectivity condition holds.
    #[arg(long)]
    allow_disconnected: bool,
    /// Write every k-th trajectory sample.
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// Evaluate per-sample metrics on every k-th sample.
    #[arg(long, default_value_t = 1)]
    metrics_stride: usize,
    #[arg(long, default_value_t = 1e-3)]
    convergence_tol: f64,
    /// Spacing of containment check times. Defaults to max(5, horizon / 50);
    /// zero disables the check.
    #[arg(long)]
    containment_every: Option<f64>,
    /// Fraction of the run used for tail statistics.
    #[arg(long, default_value_t = 0.25)]
    tail_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Require {
    Ujsc,
    Ijc,
    Any,
}

#[derive(Debug, clap::Args)]
struct CertifyArgs {
    scenario: PathBuf,
    /// UJSC window length. Without it the smallest passing window is searched.
    #[arg(long)]
    window: Option<f64>,
    /// Condition that decides the exit code.
    #[arg(long, value_enum, default_value_t = Require::Any)]
    require: Require,
    /// Also write certification.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct SuiteArgs {
    /// projector-axioms, lemma41, eq39, delta-containment, theorem31,
    /// theorem32 or counterexample.
    name: String,
    #[arg(long, env = "OPTFLOW_OUT_DIR", default_value = "optflow-out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GenKind {
    Ujsc,
    Ijc,
    Counterexample,
    Random,
    Symmetric,
    Single,
}

#[derive(Debug, clap::Args)]
struct GenArgs {
    #[arg(value_enum)]
    kind: GenKind,
    #[arg(long, short = 'n', default_value_t = 4)]
    agents: usize,
    #[arg(long, short = 'm', default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Interval growth factor (ijc).
    #[arg(long, default_value_t = 2.0)]
    growth: f64,
    /// Passes through the edge list (ijc).
    #[arg(long)]
    rounds: Option<u32>,
    /// Override the generated horizon.
    #[arg(long)]
    t_end: Option<f64>,
    /// Output file; stdout when omitted.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => commands::run(&a),
        Command::Certify(a) => commands::certify(&a),
        Command::Suite(a) => commands::suite(&a),
        Command::Gen(a) => commands::gen(&a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("optflow: {error:#}");
            ExitCode::from(code)
        }
    }
}
