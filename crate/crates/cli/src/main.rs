use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmtc_core::harness::{
    export_records, load_scenario, run_experiment, sweep_optimize, write_records, ExperimentKind, MetricRecord,
    RecordFormat,
};
use mmtc_core::Result;

/// Runs mMTC uplink simulation scenarios and writes metric tables.
#[derive(Parser)]
#[command(name = "mmtc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Output {
    /// Write records here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: RecordFormat,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the trials per sweep point.
        #[arg(long)]
        trials: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Run a scenario once per grid value of a parameter and report the best.
    Sweep {
        scenario: PathBuf,
        /// Dotted parameter path such as `cra.users`, or the kind's sweep
        /// variable (`beta`, `snr_db`, ...).
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// List experiment kinds and their sweep variables.
    ListKinds,
}

fn emit(records: &[MetricRecord], output: &Output) -> Result<()> {
    match &output.out {
        Some(path) => export_records(records, path, output.format),
        None => {
            let stdout = std::io::stdout();
            write_records(records, output.format, stdout.lock())
        }
    }
}

fn run(path: &Path, seed: Option<u64>, trials: Option<u64>, output: &Output) -> Result<()> {
    let mut scenario = load_scenario(path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(trials) = trials {
        scenario.trials = trials;
    }
    scenario.validate()?;
    let records = run_experiment(&scenario, output.workers)?;
    emit(&records, output)
}

fn sweep(path: &Path, param: &str, grid: &[f64], output: &Output) -> Result<()> {
    let scenario = load_scenario(path)?;
    let result = sweep_optimize(&scenario, param, grid, output.workers)?;
    let records: Vec<MetricRecord> = result.runs.into_iter().flat_map(|(_, r)| r).collect();
    emit(&records, output)?;
    eprintln!(
        "best {} = {} ({} = {})",
        result.parameter, result.best_value, result.metric, result.best_metric
    );
    Ok(())
}

fn list_kinds() -> Result<()> {
    let mut out = std::io::stdout().lock();
    for kind in ExperimentKind::ALL {
        writeln!(out, "{:<20} sweep: {:<13} {}", kind.name(), kind.sweep_variable(), kind.description())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            scenario,
            seed,
            trials,
            output,
        } => run(scenario, *seed, *trials, output),
        Command::Sweep {
            scenario,
            param,
            grid,
            output,
        } => sweep(scenario, param, grid, output),
        Command::ListKinds => list_kinds(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

