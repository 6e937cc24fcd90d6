//! Command-line front end: figure data as CSV, estimation reports as JSON and
//! protocol transcripts as JSON lines.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rislas_core::scenario_file::ConfigError;

pub mod commands;
pub mod format;

#[derive(Debug, Parser)]
#[command(
    name = "rislas",
    version,
    about = "RIS-aided localization and sensing simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// PEB over a grid of target positions (CSV `x,y,peb`).
    PebMap(PebMapArgs),
    /// PEB against RIS size next to a beacon-array baseline.
    PebCurve(PebCurveArgs),
    /// Directional and region-optimized RIS beampatterns (two CSV files).
    Beampattern(BeampatternArgs),
    /// End-to-end estimation for one of the A1, A2, B1, C1 scenarios.
    Localize(LocalizeArgs),
    /// Coordination protocol run, transcript as JSON lines.
    ProtocolSim(ProtocolArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the seed in the scenario file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PebMapArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub target: Option<String>,
    /// Grid points along x.
    #[arg(long)]
    pub nx: Option<usize>,
    /// Grid points along y.
    #[arg(long)]
    pub ny: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PebCurveArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated element counts, each a perfect square.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
pub struct BeampatternArgs {
    #[command(flatten)]
    pub common: Common,
    /// Plot grid step in degrees.
    #[arg(long)]
    pub step_deg: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scenario tag: A1, A2, B1 or C1.
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long)]
    pub monte_carlo: Option<usize>,
    /// Per-sample SNR of the weakest path, dB.
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub noiseless: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ProtocolArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub target: Option<String>,
    /// Solve at the coordinator instead of the target.
    #[arg(long)]
    pub offload: bool,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    /// The run itself failed or produced protocol violations.
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Run(_) => 2,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config(ConfigError::new(key, message))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Run(m) => write!(f, "run failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::PebMap(a) => commands::peb_map(a),
        Command::PebCurve(a) => commands::peb_curve(a),
        Command::Beampattern(a) => commands::beampattern(a),
        Command::Localize(a) => commands::localize(a),
        Command::ProtocolSim(a) => commands::protocol_sim(a),
    }
}
