//! `fsl`: batch driver for the llt-core toolkit.
//!
//! Exit status is 0 on success, 1 when `verify` finds a failing criterion,
//! 2 for unreadable or invalid configurations, 3 for numerical failures
//! and 4 when results cannot be written.

mod commands;
mod config;
mod emit;

use clap::{Parser, Subcommand};
use emit::Format;
use llt_core::verify::Suite;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "fsl", version, about = "Log-Laplace transforms, localization and proximal sampling experiments")]
pub struct Cli {
    /// Base seed; replica `r` draws from stream `r` of this seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default: $FSL_OUT_DIR, then the working directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=4096))]
    pub replicas: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Log-Laplace transform of a potential.
    Llt {
        #[command(subcommand)]
        action: LltAction,
    },
    /// Stochastic localization chains.
    Localize {
        #[command(subcommand)]
        action: RunAction,
    },
    /// Proximal sampler chains.
    Prox {
        #[command(subcommand)]
        action: RunAction,
    },
    /// Discrete two-component Gibbs samplers.
    Gibbs {
        #[command(subcommand)]
        action: GibbsAction,
    },
    /// Differentially private optimization plans.
    Dp {
        #[command(subcommand)]
        action: DpAction,
    },
    /// Run the acceptance checks.
    Verify {
        #[arg(long, default_value = "all", value_parser = parse_suite)]
        suite: Suite,
    },
}

#[derive(Debug, Subcommand)]
pub enum LltAction {
    /// Value, gradient, Hessian and error bound at each configured point.
    Eval { config: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum RunAction {
    Run { config: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum GibbsAction {
    /// Spectral report for a joint probability table given as CSV rows.
    Analyze { joint: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum DpAction {
    Plan {
        #[arg(long = "json")]
        json: PathBuf,
    },
    RunToy { config: PathBuf },
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    Suite::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug)]
pub enum Failure {
    Schema(String),
    Numerical { module: &'static str, message: String },
    Io(String),
}

impl Failure {
    pub fn from_core(module: &'static str, e: llt_core::Error) -> Self {
        if e.is_input_error() {
            Failure::Schema(format!("{module}: {e}"))
        } else {
            Failure::Numerical {
                module,
                message: e.to_string(),
            }
        }
    }

    pub fn io(e: impl std::fmt::Display) -> Self {
        Failure::Io(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Schema(_) => 2,
            Failure::Numerical { .. } => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Schema(m) => write!(f, "invalid configuration: {m}"),
            Failure::Numerical { module, message } => write!(f, "numerical failure in {module}: {message}"),
            Failure::Io(m) => write!(f, "cannot write results: {m}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("FSL_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let outcome = commands::run(&cli).and_then(|o| {
        let written = o.artifacts.write_all(&dir)?;
        Ok((o.summary, o.passed, written))
    });
    match outcome {
        Ok((summary, passed, written)) => {
            print!("{}", String::from_utf8_lossy(&summary));
            for path in written {
                eprintln!("wrote {}", path.display());
            }
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("fsl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
