use std::process::ExitCode;

use clap::Parser;
use vigc_cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match vigc_cli::run(&cli, &mut std::io::stdout().lock()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
