use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use fosr_cli::commands;
use fosr_cli::config::Config;
use fosr_core::Error;

/// Penalized function-on-scalar regression over interval, square, sphere,
/// and torus domains: fitting, tuning, simulation, and rate reporting.
#[derive(Parser)]
#[command(name = "fosr", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Path to a key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Random seed, overriding the config file's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Extra `key=value` settings applied on top of the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model at a fixed penalty and write it with its coefficients.
    Fit(RunArgs),
    /// Search penalties (and optionally kernels) by cross-validation.
    Tune(RunArgs),
    /// Run a simulation setting's replicate grid into an error table.
    Simulate(RunArgs),
    /// Summarize an error table into convergence-rate estimates.
    Rates(RunArgs),
    /// Tabulate eigenvalues of a Laplacian or kernel spectrum.
    Spectra(RunArgs),
    /// Evaluate a saved model for new subjects at its quadrature nodes.
    Predict(RunArgs),
}

fn setup_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("FOSR_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::invalid(format!("FOSR_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::invalid(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    setup_threads()?;
    let (args, run_fn): (&RunArgs, fn(&Config, &std::path::Path) -> Result<(), Error>) =
        match &cli.command {
            Command::Fit(a) => (a, commands::run_fit),
            Command::Tune(a) => (a, commands::run_tune),
            Command::Simulate(a) => (a, commands::run_simulate),
            Command::Rates(a) => (a, commands::run_rates),
            Command::Spectra(a) => (a, commands::run_spectra),
            Command::Predict(a) => (a, commands::run_predict),
        };
    let mut config = Config::load(&args.config)?;
    config.apply_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        config.set("seed", seed.to_string());
    }
    run_fn(&config, &args.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::InvalidInput(msg)) => {
            eprintln!("error: invalid input: {msg}");
            ExitCode::from(1)
        }
        Err(Error::Numerical(msg)) => {
            eprintln!("error: numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
