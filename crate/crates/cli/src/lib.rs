//! Command-line driver for `vigc`.

pub mod args;
pub mod commands;
pub mod config;

use std::io::Write;

use anyhow::Result;

pub use args::{Cli, Command};
pub use config::RunConfig;

/// Run one command; `Ok(false)` means it finished but a check failed.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<bool> {
    match &cli.command {
        Command::Gradcheck => commands::gradcheck(&vigc::gradcheck::standard_suite(), out),
        Command::Train(a) => commands::train(a, out).map(|()| true),
        Command::Infer(a) => commands::infer(a, out).map(|_| true),
        Command::GenData(a) => Ok(commands::gen_data(a, out)?.failures.is_empty()),
    }
}
