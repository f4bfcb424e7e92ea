//! `scenepipe` command-line entry point.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Exit codes.
const USAGE: u8 = 1;
const DATA: u8 = 2;
const NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<scenepipe::Error>() {
            return if e.is_data_error() {
                DATA
            } else if matches!(e, scenepipe::Error::Numerical(_)) {
                NUMERICAL
            } else {
                USAGE
            };
        }
        if cause.downcast_ref::<commands::CheckFailed>().is_some() {
            return NUMERICAL;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return DATA;
        }
    }
    USAGE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet {
        "warn"
    } else {
        "info"
    }))
    .format_timestamp(None)
    .init();

    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::AnalyzeSwap(a) => commands::analyze_swap(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
