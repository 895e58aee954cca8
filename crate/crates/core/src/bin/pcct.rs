use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match pcct::cli::run(pcct::cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
