//! The `tuber` command line: synthetic data, labeling, cross-validated training,
//! evaluation, class-count sweeps, Grad-CAM heatmaps, cost profiles and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod plots;
pub mod report;
pub mod run;

use std::ffi::OsString;

use clap::error::ErrorKind as ClapKind;
use clap::Parser;

pub use commands::{execute, Cli, Command};
pub use config::{ExperimentConfig, Task};
pub use error::CliError;

/// Parses and runs one command line; argument errors become `InvalidArguments` usage errors.
pub fn run_args<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        let text = e.to_string();
        let first = text.lines().next().unwrap_or_default();
        CliError::usage("InvalidArguments", first.strip_prefix("error: ").unwrap_or(first))
    })?;
    execute(cli)
}

/// Process entry point; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if let Err(e) = Cli::try_parse_from(&args) {
        if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion | ClapKind::DisplayHelpOnMissingArgumentOrSubcommand) {
            print!("{e}");
            return if e.kind() == ClapKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
        }
    }
    match run_args(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
