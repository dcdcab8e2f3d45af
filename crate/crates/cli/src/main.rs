use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dsse_core::bundled;
use dsse_core::experiments::{DEFAULT_C, DEFAULT_DELTAS, DEFAULT_NOISE, DEFAULT_NOISE_LEVELS, SUMMER_WEEK};

mod commands;
mod plot;

#[derive(Debug, Parser)]
#[command(name = "dsse", version, about = "Feeder power flow, state estimation and sensitivity sweeps")]
struct Cli {
    /// Worker threads for scenario batches (default: one per core).
    #[arg(long, env = "DSSE_WORKERS", global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Solve the load flow of every hour in the window.
    Powerflow(PowerflowArgs),
    /// Estimate every hour in the window and report the pooled error.
    Estimate(EstimateArgs),
    /// Error against pseudo-measurement variance deviation.
    SweepVariance(VarianceArgs),
    /// Error as sensor groups are added from the feeder head.
    SweepCoverage(CoverageArgs),
    /// Regenerate the outputs of an earlier run from its manifest.
    Report(ReportArgs),
}

/// Hour range `start..end` of the yearly profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once("..").ok_or_else(|| format!("expected start..end, got {s:?}"))?;
        let start = a.trim().parse().map_err(|e| format!("window start: {e}"))?;
        let end = b.trim().parse().map_err(|e| format!("window end: {e}"))?;
        if end <= start {
            return Err(format!("window {s:?} is empty"));
        }
        Ok(Self { start, end })
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Common {
    /// Feeder description (JSON).
    #[arg(long)]
    pub feeder: PathBuf,
    /// Hourly load multiplier, one value per line.
    #[arg(long, default_value_os_t = bundled::data(bundled::LOAD_MULTIPLIER))]
    pub load_profile: PathBuf,
    /// Hourly PV output, one value per line (any unit).
    #[arg(long, default_value_os_t = bundled::data(bundled::PV_PROFILE))]
    pub pv_profile: PathBuf,
    /// Hours to simulate.
    #[arg(long, default_value_t = Window { start: SUMMER_WEEK.start, end: SUMMER_WEEK.end })]
    pub window: Window,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Half-width of the per-node load perturbation, relative to the multiplier.
    #[arg(long, default_value_t = DEFAULT_C)]
    pub c: f64,
    /// PV peak after normalisation (default: peak of the load multiplier).
    #[arg(long)]
    pub pv_peak: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PowerflowArgs {
    #[command(flatten)]
    pub common: Common,
    /// Solve with every load set to zero.
    #[arg(long)]
    pub no_load: bool,
    /// Leave out hours whose load flow fails instead of stopping.
    #[arg(long)]
    pub skip_diverged: bool,
}

/// Pseudo-measurement statistics used by `estimate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PseudoCovariance {
    /// Means and covariances over the whole year.
    Year,
    /// Yearly means with the sample covariance of the window.
    Window,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Sensor placement CSV, or `none` for pseudo-measurements only.
    #[arg(long, default_value = "none")]
    pub sensors: String,
    /// Sensor noise (p.u. / rad) for placements without a sigma.
    #[arg(long, default_value_t = DEFAULT_NOISE)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = PseudoCovariance::Year)]
    pub pseudo_cov: PseudoCovariance,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VarianceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "none")]
    pub sensors: String,
    /// Sensor noise levels; each replaces every placement sigma.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_NOISE_LEVELS)]
    pub noise: Vec<f64>,
    /// Covariance deviations in percent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = DEFAULT_DELTAS)]
    pub grid: Vec<f64>,
    /// Replicates with seeds `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    pub reseeds: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CoverageArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_NOISE_LEVELS)]
    pub noise: Vec<f64>,
    /// Nodes per sensor group.
    #[arg(long, default_value_t = 3)]
    pub group_size: usize,
    /// Buses left out of the placement order.
    #[arg(long, value_delimiter = ',')]
    pub skip: Vec<String>,
    /// Stop after this many groups.
    #[arg(long)]
    pub max_groups: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub reseeds: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// `manifest.json` written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory (default: the directory of the manifest).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Bad invocation: missing inputs or invalid arguments. Exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(message.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: DSSE_WORKERS must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
