use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    tsmt::cli::init_logging();
    match tsmt::cli::run(tsmt::cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
