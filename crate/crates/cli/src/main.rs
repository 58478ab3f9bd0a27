use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use froglab_cli::{emit_report, parse_config, run_experiment, CliError, ExperimentConfig};

/// Frog model experiments on Cayley graphs of abelian groups.
#[derive(Parser)]
#[command(name = "froglab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config, printing its hash.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every experiment of a config and print the report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads, overriding `parallelism`.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Ball element budget, overriding `memory_budget`.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Rebuild the report of a finished run.
    Report {
        /// Output directory of the run.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit status: 0 all checks passed, 1 a check failed, 2 an error occurred.
fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    parse_config(&text)
}

fn execute(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Validate { config } => {
            let c = load(&config)?;
            println!("{}: valid, {} experiment(s), config hash {}", config.display(), c.experiments.len(), c.hash());
            Ok(true)
        }
        Command::Run { config, out, parallelism, budget } => {
            let mut c = load(&config)?;
            if let Some(out) = out {
                c.output_dir = out;
            }
            if let Some(p) = parallelism {
                c.parallelism = p;
            }
            if let Some(b) = budget {
                c.memory_budget = b;
            }
            run_experiment(&c, &c.output_dir)?;
            let report = emit_report(&c.output_dir)?;
            print!("{}", report.text);
            Ok(report.passed())
        }
        Command::Report { out } => {
            let report = emit_report(&out)?;
            print!("{}", report.text);
            Ok(report.passed())
        }
    }
}
