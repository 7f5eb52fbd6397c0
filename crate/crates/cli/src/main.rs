mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use minrev::ingest::Sex;

/// Minimum-reversion mortality model: simulation, asymptotics, estimation
/// and common-age-effect fitting.
#[derive(Debug, Parser)]
#[command(name = "minrev", version)]
pub struct Cli {
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Directory holding `{COUNTRY}.Deaths_1x1.txt` and `{COUNTRY}.Exposures_1x1.txt`.
    #[arg(long)]
    pub hmd_dir: Option<PathBuf>,
    /// Comma-separated HMD country codes.
    #[arg(long, value_delimiter = ',')]
    pub countries: Option<Vec<String>>,
    #[arg(long, value_parser = parse_sex)]
    pub sex: Option<Sex>,
    /// Inclusive year range, e.g. 1951-2011.
    #[arg(long, value_parser = config::parse_range::<i32>)]
    pub years: Option<(i32, i32)>,
    /// Inclusive age range, e.g. 0-95.
    #[arg(long, value_parser = config::parse_range::<u32>)]
    pub ages: Option<(u32, u32)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble HMD files into a deaths/exposures dataset CSV.
    Ingest(DataArgs),
    /// Simulate an ensemble of paths.
    Simulate {
        #[arg(long)]
        n_paths: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Monte Carlo extremal drift and spread tables.
    Tables {
        /// Comma-separated lambda values.
        #[arg(long, value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
        /// Comma-separated population sizes.
        #[arg(long, value_delimiter = ',')]
        populations: Option<Vec<usize>>,
        #[arg(long)]
        n_paths: Option<usize>,
    },
    /// Closed-form two-population drift and spread.
    Asymptotics {
        #[arg(long, value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
    },
    /// Fit the common-age-effect model and export period effects.
    FitCae {
        #[command(flatten)]
        data: DataArgs,
        /// Assembled dataset CSV instead of HMD files.
        #[arg(long, conflicts_with = "hmd_dir")]
        data_csv: Option<PathBuf>,
        /// Reference age for identification.
        #[arg(long)]
        xr: Option<u32>,
    },
    /// Maximum-likelihood fit of the time-series model.
    FitTs {
        /// Period-effect CSV (`year,population,kappa`).
        #[arg(long)]
        kappa: Option<PathBuf>,
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// BIC comparison of the models with and without minimum reversion.
    CompareBic {
        #[arg(long)]
        kappa: Option<PathBuf>,
        /// Fit only the model without reversion.
        #[arg(long)]
        lambda_fixed_zero: bool,
    },
}

fn parse_sex(s: &str) -> Result<Sex, String> {
    s.parse().map_err(|e: minrev::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli.threads;
    match minrev::par::with_threads(threads, || commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
