//! Command-line entry: verb dispatch and exit codes. 0 is success, 1 a
//! config error, 2 a runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rdis_cli::config::ExperimentConfig;
use rdis_cli::runner::{self, RunOutcome, SweepAxis};
use rdis_cli::{report, CliError};

#[derive(Parser)]
#[command(
    name = "rdis",
    version,
    about = "Random-drop imputation and self-training for incomplete time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured method across all missing rates and seeds.
    Train(RunArgs),
    /// Fill the missing cells of a CSV with a saved ensemble.
    Impute {
        /// Checkpoint directory written by train --checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input CSV with missing cells.
        #[arg(long)]
        data: PathBuf,
        /// Output CSV with every cell filled.
        #[arg(long)]
        out: PathBuf,
        /// Rows handled per model pass.
        #[arg(long, default_value_t = 48)]
        window: usize,
    },
    /// Run the experiment once per value along one hyperparameter axis.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Axis: missing_rate, drop_rate, threshold, or update_epoch.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Aggregate a results file into a summary table and plot data.
    Report {
        /// Results file produced by train or sweep.
        #[arg(long)]
        results: PathBuf,
        /// Summary output (default: <results>_summary.csv).
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Plot data output (default: <results>_plot.csv).
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Key-value config file; defaults match the reference settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set epochs=300.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Desk-size preset: 2 members, 200 epochs, 200 windows.
    #[arg(long)]
    desk_scale: bool,
    /// Results file; appended to, finished runs are skipped.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Directory for trained ensembles (one subdirectory per run).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

/// Defaults, then the config file, then the desk-scale preset, then
/// individual --set overrides.
fn build_config(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if args.desk_scale {
        cfg.desk_scale();
    }
    for pair in &args.overrides {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set wants KEY=VALUE, got {pair:?}")))?;
        cfg.set(key.trim(), value).map_err(CliError::Config)?;
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn finish(outcome: RunOutcome) -> Result<(), CliError> {
    eprintln!(
        "{} runs finished, {} skipped, {} failed",
        outcome.completed, outcome.skipped, outcome.failed
    );
    if outcome.failed > 0 {
        return Err(CliError::Runtime(format!("{} runs failed to train", outcome.failed)));
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(args) => {
            let cfg = build_config(&args)?;
            finish(runner::run_experiment(&cfg, &args.out, args.checkpoint.as_deref())?)
        }
        Command::Impute { checkpoint, data, out, window } => {
            runner::impute_csv(&checkpoint, &data, &out, window)
        }
        Command::Sweep { run, axis, values } => {
            let cfg = build_config(&run)?;
            let axis = SweepAxis::parse(&axis).ok_or_else(|| {
                CliError::Config(format!(
                    "axis: must be missing_rate, drop_rate, threshold, or update_epoch, got {axis:?}"
                ))
            })?;
            finish(runner::sweep(&cfg, axis, &values, &run.out, run.checkpoint.as_deref())?)
        }
        Command::Report { results, summary, plot } => {
            let (s, p) = report::report_files(&results, summary, plot)?;
            eprintln!("wrote {} and {}", s.display(), p.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version land here with their zero-exit kinds;
            // anything else is a usage problem, which is a config error.
            let code = u8::from(err.use_stderr());
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ CliError::Config(_)) => {
            eprintln!("{err}");
            ExitCode::from(1)
        }
        Err(err @ CliError::Runtime(_)) => {
            eprintln!("{err}");
            ExitCode::from(2)
        }
    }
}
