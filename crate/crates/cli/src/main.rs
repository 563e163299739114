use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

/// Finite-space no-arbitrage toolkit: counterexample analytics, detectors
/// and decompositions. Tables are written as CSV, reports as JSON.
#[derive(Parser, Debug)]
#[command(name = "ftap", version)]
pub struct Cli {
    /// Directory for emitted files.
    #[arg(long, global = true, env = "FTAP_OUT_DIR", default_value = "ftap-out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cut points, residuals and means of the singular counterexample.
    Counterexample {
        #[arg(long, default_value_t = 20)]
        n_max: usize,
        /// Bisection tolerance on the cut-point equation.
        #[arg(long, default_value_t = 1e-14)]
        tol: f64,
    },
    /// Binary large market: per-asset distance to the unit jump and NA verdicts.
    Binary {
        #[arg(long, default_value_t = 12)]
        n: usize,
        /// `geometric:<ratio>` or a comma-separated list of probabilities.
        #[arg(long, default_value = "geometric:0.5")]
        p: String,
        #[command(flatten)]
        gate: Gate,
    },
    /// Full no-arbitrage report for a one-period market.
    Scan {
        #[command(flatten)]
        market: MarketArg,
        #[arg(long, default_value_t = 1e-6)]
        floor_bisect_tol: f64,
        /// Increasing levels for the success-probability profile.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,5,10")]
        c_list: Vec<f64>,
        #[command(flatten)]
        gate: Gate,
    },
    /// Emery-distance estimates along the binary asset sequence.
    Emery {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value = "geometric:0.5")]
        p: String,
        /// `greedy`, `enum` or `random:<count>`.
        #[arg(long, default_value = "greedy")]
        family: String,
        /// Successive-distance threshold for the Cauchy verdict.
        #[arg(long, default_value_t = 0.01)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Truncation decomposition X = B + M + big jumps.
    Decompose {
        /// JSON file `{"tree": <tree document>, "values": [...]}`; a seeded
        /// random tree and process are used when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Separating or martingale measures with an equivalence floor.
    Polytope {
        #[command(flatten)]
        market: MarketArg,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Equality)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = FloorArg::Lower)]
        floor: FloorArg,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

#[derive(Args, Debug)]
pub struct MarketArg {
    /// Built-in market name, `random`, or a JSON config path.
    #[arg(long)]
    pub market: String,
    /// Seed for `--market random`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct Gate {
    /// Exit with status 1 when an arbitrage is found.
    #[arg(long)]
    pub assert_no_arbitrage: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Inequality,
    Equality,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum FloorArg {
    Lower,
    Band,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Io(String),
    Core(ftap_core::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Io(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<ftap_core::Error> for CliError {
    fn from(e: ftap_core::Error) -> Self {
        CliError::Core(e)
    }
}

/// Whether a gated run found an arbitrage.
pub enum Outcome {
    Clean,
    ArbitrageFound(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::ArbitrageFound(why)) => {
            eprintln!("arbitrage found: {why}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
