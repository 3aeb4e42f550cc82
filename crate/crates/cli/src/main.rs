//! `isac-bf`: experiment driver that writes CSV and JSON artifacts.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use isac_core::optimizer::Scheme;

#[derive(Debug, Parser)]
#[command(name = "isac-bf", version, about = "Bayesian ISAC beamforming experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scene TOML; defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config's `rng_seed`; also seeds Monte-Carlo runs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps and Monte-Carlo (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides the outer-loop iteration budget.
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the proposed design and write its trace and beamformer.
    Optimize {
        /// Also write the first surrogate subproblem in plain text.
        #[arg(long)]
        dump_subproblem: Option<PathBuf>,
    },
    /// EP_d of every scheme over a grid of SINR floors or power budgets.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<f64>,
    },
    /// Transmit beampattern of every scheme from -90° to 90°.
    Beampattern,
    /// Histogram of the analytic P_d over prior draws.
    Montecarlo {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long, value_delimiter = ',', default_value = "proposed,max_sinr_0deg")]
        schemes: Vec<Scheme>,
        /// Leading draws also detected at signal level.
        #[arg(long, default_value_t = 0)]
        signal_trials: usize,
        #[arg(long, default_value_t = 64)]
        block_len: usize,
        /// False-alarm rate of the signal-level cross-check.
        #[arg(long, default_value_t = 1e-2)]
        pf: f64,
    },
    /// Compare the closed-form P_d with matched-filter simulation.
    ValidatePd(ValidateArgs),
    /// Print the default scene TOML.
    DumpConfigDefaults,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value_t = 1e-2)]
    pub pf: f64,
    /// Trials per cell under H1.
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    /// Trials of the false-alarm check under H0.
    #[arg(long, default_value_t = 1_000_000)]
    pub h0_trials: usize,
    #[arg(long, default_value_t = 64)]
    pub block_len: usize,
    /// Largest accepted |analytic − empirical| per cell.
    #[arg(long, default_value_t = 0.02)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    GammaDb,
    PowerDbm,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::GammaDb => "gamma_db",
            Axis::PowerDbm => "power_dbm",
        }
    }
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    /// Some points or schemes failed, a run did not converge, or a
    /// validation exceeded its tolerance.
    Partial = 1,
    Usage = 2,
    Numerical = 3,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = commands::run(&cli);
    ExitCode::from(code as u8)
}
