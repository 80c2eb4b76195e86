//! Command-line front end for `nirm`.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod staging;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

use args::{Cli, Command, ExtendCommand};
use error::{CliResult, EXIT_USAGE};

/// Parse `args`, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            for m in &e.messages {
                eprintln!("error: {m}");
            }
            e.code
        }
    }
}

fn dispatch(command: &Command) -> CliResult<()> {
    let done = |p: std::path::PathBuf| println!("{}", p.display());
    match command {
        Command::Fit(a) => commands::cmd_fit(a).map(done),
        Command::Extend(ExtendCommand::Score(a)) => commands::cmd_extend_score(a).map(done),
        Command::Extend(ExtendCommand::Link(a)) => commands::cmd_extend_link(a).map(done),
        Command::Export(a) => commands::cmd_export(a).map(done),
        Command::Simulate(a) => commands::cmd_simulate(a).map(done),
        Command::Counts(a) => {
            let text = commands::cmd_counts(a)?;
            if a.out.is_none() {
                let _ = std::io::stdout().write_all(text.as_bytes());
            }
            Ok(())
        }
    }
}
