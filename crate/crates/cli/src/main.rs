//! `nsfts`: ingest mortality tables, fit and forecast the two-stage model,
//! and run expanding-window evaluations.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::CliError;
use nsfts::synthetic::MortalitySpec;

#[derive(Debug, Parser)]
#[command(name = "nsfts", version, about = "Two-stage functional time series forecasting of mortality curves")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML run configuration; flags override its entries.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, pool, impute and smooth the input table and write the curves.
    Ingest(RunArgs),
    /// Fit the model(s) and write versioned JSON model documents.
    Fit(RunArgs),
    /// Forecast from a saved model, optionally with bootstrap bands.
    Forecast {
        /// Model document written by `fit`
        #[arg(long)]
        model: PathBuf,
        /// Years to forecast past the last observed curve
        #[arg(long, short = 'H')]
        horizon: usize,
        /// Bootstrap replicates; 0 gives point forecasts only
        #[arg(long, default_value_t = 0, visible_alias = "bootstrap-b")]
        replicates: usize,
        /// Nominal miss rate of the prediction bands
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        /// Bootstrap seed; required when replicates > 0
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long, default_value = "nsfts-out")]
        out: PathBuf,
    },
    /// Expanding-window backtest over the test block.
    Evaluate(RunArgs),
    /// Merge saved evaluation reports into plot data and a comparison table.
    ComparePlots {
        /// JSON reports written by `evaluate`
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// Output directory
        #[arg(long, default_value = "nsfts-out")]
        out: PathBuf,
    },
    /// Write a synthetic population in the HMD text layout.
    Synth {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value = "synthetic_")]
        prefix: String,
        #[arg(long, default_value_t = MortalitySpec::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = MortalitySpec::default().first_year)]
        first_year: i32,
        #[arg(long, default_value_t = MortalitySpec::default().n_years)]
        years: usize,
        #[arg(long, default_value_t = MortalitySpec::default().max_age)]
        max_age: u32,
    },
}

fn resolve(args: &RunArgs, needs_bootstrap: bool) -> Result<config::Resolved, CliError> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.apply(&args.overrides)?;
    cfg.resolve(needs_bootstrap)
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure threads: {e}")))?;
    }
    match cli.command {
        Command::Ingest(a) => commands::ingest(&resolve(&a, false)?),
        Command::Fit(a) => commands::fit(&resolve(&a, false)?),
        Command::Evaluate(a) => commands::evaluate(&resolve(&a, true)?),
        Command::Forecast {
            model,
            horizon,
            replicates,
            alpha,
            seed,
            out,
        } => commands::forecast(&commands::ForecastArgs {
            model,
            horizon,
            replicates,
            alpha,
            seed,
            out,
        }),
        Command::ComparePlots { reports, out } => commands::compare_plots(&reports, &out),
        Command::Synth {
            out,
            prefix,
            seed,
            first_year,
            years,
            max_age,
        } => commands::synth(
            &MortalitySpec {
                first_year,
                n_years: years,
                max_age,
                seed,
                ..MortalitySpec::default()
            },
            &out,
            &prefix,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(msg) => {
            print!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
