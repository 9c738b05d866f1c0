//! Command-line pipeline: synthesise or prepare data, train, evaluate,
//! transfer, ablate and dump model internals as CSV.
//!
//! Every command is a plain function taking its parsed arguments and the
//! environment, so the whole pipeline can be driven from tests.

pub mod args;
pub mod commands;
pub mod config;
pub mod dump;
pub mod output;

use std::fmt;

pub use args::{Cli, Command};

/// A library error or a malformed command line.
#[derive(Debug)]
pub enum CliError {
    Core(usts::Error),
    Usage(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Usage(_) => "E_USAGE",
        }
    }

    /// `error code=E_... message` on one line.
    pub fn report_line(&self) -> String {
        let msg = self.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error code={} {msg}", self.code())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<usts::Error> for CliError {
    fn from(e: usts::Error) -> Self {
        CliError::Core(e)
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Dispatches one parsed command.
pub fn run(cli: Cli, env: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let env: Vec<(String, String)> = env.into_iter().collect();
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Prepare(a) => commands::prepare(&a, env),
        Command::Train(a) => commands::train(&a, env),
        Command::Eval(a) => commands::eval(&a, env),
        Command::Zeroshot(a) => commands::zeroshot(&a, env),
        Command::Ablate(a) => commands::ablate(&a, env),
        Command::Dump(a) => dump::dump(&a, env),
    }
}
