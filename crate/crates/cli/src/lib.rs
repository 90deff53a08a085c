//! The `handstate` command: dataset generation, training, evaluation
//! protocols with figures, and replay of recordings or live streams.

pub mod args;
pub mod commands;
pub mod manifest;
pub mod svg;

use std::process::ExitCode;

use clap::Parser;
use handstate_core::Error as CoreError;
use handstate_eval::EvalError;
use handstate_models::ModelError;
use handstate_stream::StreamError;

use crate::args::{Cli, Command};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Exit code for a failed run: training and solver failures are numeric,
/// everything else is a problem with the inputs.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            match e {
                EvalError::Training { .. } => return EXIT_NUMERIC,
                EvalError::Model(m) => return model_code(m),
                _ => return EXIT_VALIDATION,
            }
        }
        if let Some(m) = cause.downcast_ref::<ModelError>() {
            return model_code(m);
        }
        if let Some(StreamError::Model(m)) = cause.downcast_ref::<StreamError>() {
            return model_code(m);
        }
        if let Some(CoreError::UndefinedMetric(_)) = cause.downcast_ref::<CoreError>() {
            return EXIT_NUMERIC;
        }
    }
    EXIT_VALIDATION
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Diverged { .. } | ModelError::NotConverged { .. } => EXIT_NUMERIC,
        _ => EXIT_VALIDATION,
    }
}

/// Parses `argv` (after `--config` expansion) and runs the subcommand.
pub fn run(argv: Vec<String>) -> ExitCode {
    let expanded = match args::expand_config(argv.clone()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(&expanded) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a, argv),
        Command::Train(a) => commands::train_model(a, argv),
        Command::Crossval(a) => commands::crossval(a, argv),
        Command::Replay(a) => commands::replay_cmd(a, argv),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
