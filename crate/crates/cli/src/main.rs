use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match qei_cli::run(qei_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qei: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
