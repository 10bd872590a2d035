use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use optsub::{Criterion, Method};
use optsub_cli::commands::{self, FitArgs, ProbabilitiesArgs, SimulateArgs};
use optsub_cli::{parse_config, CliError};

#[derive(Parser)]
#[command(
    name = "optsub",
    version,
    about = "Optimal subsampling for GLMs under measurement constraints"
)]
struct Cli {
    /// Cap the repetition thread pool at this many threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation campaign and write the report CSV (and manifest).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Export the sampling probabilities as `row_index,pi`.
    Probabilities {
        #[arg(long)]
        config: PathBuf,
        /// A-OS or L-OS; defaults to the first criterion in the config.
        #[arg(long)]
        criterion: Option<Criterion>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Responses outside the pilot may be NA; list pilot rows still to be measured.
        #[arg(long)]
        responses_on_demand: bool,
        #[arg(long)]
        to_measure: Option<PathBuf>,
    },
    /// Fit one two-stage estimate and write it as JSON.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "unweighted")]
        method: Method,
        #[arg(long)]
        criterion: Option<Criterion>,
        /// Subsample size; defaults to the first entry of r_grid.
        #[arg(long)]
        r: Option<usize>,
        /// Only pilot and subsample rows need responses; missing ones are listed.
        #[arg(long)]
        responses_on_demand: bool,
        /// Also fit the full-data MLE and report the distance to it.
        #[arg(long)]
        full_fit: bool,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        to_measure: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate {
            config,
            report,
            manifest,
        } => {
            let cfg = parse_config(&config)?;
            commands::simulate(&cfg, &SimulateArgs { report, manifest })?;
        }
        Command::Probabilities {
            config,
            criterion,
            output,
            responses_on_demand,
            to_measure,
        } => {
            let cfg = parse_config(&config)?;
            commands::probabilities(
                &cfg,
                &ProbabilitiesArgs {
                    criterion,
                    output,
                    responses_on_demand,
                    to_measure,
                },
            )?;
        }
        Command::Fit {
            config,
            method,
            criterion,
            r,
            responses_on_demand,
            full_fit,
            output,
            to_measure,
        } => {
            let cfg = parse_config(&config)?;
            commands::fit(
                &cfg,
                &FitArgs {
                    method,
                    criterion,
                    r,
                    responses_on_demand,
                    full_fit,
                    output,
                    to_measure,
                },
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("optsub: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
