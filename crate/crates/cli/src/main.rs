//! `nca`: train, render, measure and sweep neural cellular automata.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use nca_core::NcaError;

use args::{Cli, Command};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_DATA: u8 = 5;

fn exit_code(err: &NcaError) -> u8 {
    match err {
        NcaError::InvalidArgument(_) | NcaError::Config { .. } | NcaError::ShapeMismatch { .. } => {
            EXIT_USAGE
        }
        NcaError::Io { .. } => EXIT_IO,
        NcaError::NonFinite { .. } | NcaError::NonFiniteParameter(_) => EXIT_NUMERIC,
        NcaError::Image { .. }
        | NcaError::BadMagic
        | NcaError::UnsupportedVersion(_)
        | NcaError::TruncatedCheckpoint { .. }
        | NcaError::TooFewFrames(_)
        | NcaError::InconsistentFrames { .. }
        | NcaError::UndefinedCorrelation(_)
        | NcaError::InsufficientData { .. }
        | NcaError::Format { .. } => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NCA_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Measure(a) => commands::measure(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
