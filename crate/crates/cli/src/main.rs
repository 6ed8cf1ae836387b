use std::process::ExitCode;

use clap::Parser;
use divc_cli::cli::{run, Cli};
use divc_cli::CliError;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Gate(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
