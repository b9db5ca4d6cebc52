//! `edrisk`: scenario generation, proxy training, Monte-Carlo dispatch
//! simulation and risk reporting over a DC network.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 invalid input or missing
//! file, 3 every training run diverged, 4 malformed scenario or trajectory
//! data, 5 horizon mismatch between compared backends.

mod args;
mod commands;
mod svg;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Error carrying the process exit code.
#[derive(Debug, thiserror::Error)]
#[error("{msg}")]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

pub type CliResult<T> = Result<T, Failure>;

pub trait ExitWith<T> {
    fn exit(self, code: u8) -> CliResult<T>;
}

impl<T, E: std::fmt::Display> ExitWith<T> for Result<T, E> {
    fn exit(self, code: u8) -> CliResult<T> {
        self.map_err(|e| Failure {
            code,
            msg: e.to_string(),
        })
    }
}

pub fn fail<T>(code: u8, msg: impl Into<String>) -> CliResult<T> {
    Err(Failure { code, msg: msg.into() })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match args::resolve(cli).and_then(commands::run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("edrisk: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
