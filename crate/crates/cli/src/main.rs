mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{
    BenchArgs, CompareArgs, EvalArgs, GenDataArgs, InvertArgs, LearningCurveArgs, PhaseScanArgs, PredictArgs,
    TrainArgs,
};

/// Exact lattice solvers, training data and convolutional surrogates for
/// spatial observable maps.
#[derive(Parser, Debug)]
#[command(name = "latmap", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Global {
    /// JSON or TOML file with the subcommand's keys; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Print the result record as JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Only warnings and errors on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate an exact-diagonalization training set.
    GenData(GenDataArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Score a model on a dataset.
    Eval(EvalArgs),
    /// Test error against training-set size.
    LearningCurve(LearningCurveArgs),
    /// Observable maps for one potential.
    Predict(PredictArgs),
    /// Checkerboard order over a (mu/U, 4J/U) grid on a flat potential.
    PhaseScan(PhaseScanArgs),
    /// Search for a potential that produces a target density.
    Invert(InvertArgs),
    /// Time the exact solver against network inference.
    Bench(BenchArgs),
    /// Exact, Hartree-Fock and network densities on a named potential.
    Compare(CompareArgs),
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn usage(kind: &str, message: String) -> Self {
        Self {
            code: 2,
            kind: kind.into(),
            message,
        }
    }

    pub fn runtime(kind: &str, message: String) -> Self {
        Self {
            code: 1,
            kind: kind.into(),
            message,
        }
    }
}

impl From<latmap::Error> for CliError {
    fn from(e: latmap::Error) -> Self {
        let code = match e {
            latmap::Error::Config(_) | latmap::Error::InvalidParams(_) => 2,
            _ => 1,
        };
        Self {
            code,
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

fn report_error(err: &CliError, to_stdout: bool) {
    let record = json!({ "error": err.kind, "message": err.message });
    eprintln!("{record}");
    if to_stdout {
        println!("{record}");
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code != 0 {
                report_error(&CliError::usage("usage", e.kind().to_string()), false);
            }
            return ExitCode::from(code as u8);
        }
    };
    let level = if cli.global.quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();

    let result = cli
        .global
        .workers
        .map_or(Ok(()), latmap::par::set_workers)
        .map_err(CliError::from)
        .and_then(|_| commands::run(&cli.global, &cli.command));
    match result {
        Ok(record) => {
            if cli.global.json {
                println!("{record}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            report_error(&e, cli.global.json);
            ExitCode::from(e.code)
        }
    }
}
