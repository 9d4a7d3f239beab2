//! `sae-monitor` command-line front end.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 internal error.
//! Failures write one JSON line `{"error": <kind>, "message": <text>}` to
//! stderr; usage problems additionally print the usage text to stdout.

mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use commands::{Cli, CliError};

fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message.replace('\n', " ") });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                print!("{e}");
                report("usage", "no subcommand given");
                return ExitCode::from(1);
            }
            _ => {
                println!("{}", Cli::command().render_usage());
                let first = e.to_string();
                let first = first.lines().next().unwrap_or("invalid arguments");
                report("usage", first.trim_start_matches("error: "));
                return ExitCode::from(1);
            }
        },
    };

    std::panic::set_hook(Box::new(|_| {}));
    let outcome = std::panic::catch_unwind(|| commands::run(cli));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(CliError::Usage(msg))) => {
            println!("{}", Cli::command().render_usage());
            report("usage", &msg);
            ExitCode::from(1)
        }
        Ok(Err(CliError::Data(msg))) => {
            report("data", &msg);
            ExitCode::from(2)
        }
        Ok(Err(CliError::Internal(msg))) => {
            report("internal", &msg);
            ExitCode::from(3)
        }
        Err(_) => {
            report("internal", "unexpected panic");
            ExitCode::from(3)
        }
    }
}
