use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match coupa::cli::run(coupa::cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
