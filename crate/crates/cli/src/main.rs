//! `hpl`: fit, evaluate, synthesize and grid-search from the command line.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Parser)]
#[command(
    name = "hpl",
    version,
    about = "Hierarchical prototype learning for zero-shot recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit on a dataset manifest and write state, predictions, history and a summary.
    Fit {
        /// JSON run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `--key value` pairs overriding config entries.
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "--KEY VALUE"
        )]
        overrides: Vec<String>,
    },
    /// Score predicted labels against truth labels; prints JSON.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalMode::Zsl)]
        mode: EvalMode,
        /// Number of seen classes (gzsl).
        #[arg(long)]
        m: Option<usize>,
        /// Number of unseen classes (gzsl).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Generate a synthetic dataset with a manifest and ground truth.
    Synth {
        /// JSON generator spec; defaults are used for missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "--KEY VALUE"
        )]
        overrides: Vec<String>,
    },
    /// Fit every point of a hyperparameter grid on a validation manifest.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "--KEY VALUE"
        )]
        overrides: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Zsl,
    Gzsl,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { config, overrides } => commands::fit(config.as_deref(), &overrides),
        Command::Eval {
            predictions,
            truth,
            mode,
            m,
            n,
        } => commands::eval(&predictions, &truth, mode, m, n),
        Command::Synth {
            spec,
            output,
            overrides,
        } => commands::synth(spec.as_deref(), &output, &overrides),
        Command::Grid { config, overrides } => commands::grid(config.as_deref(), &overrides),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::VALIDATION as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
