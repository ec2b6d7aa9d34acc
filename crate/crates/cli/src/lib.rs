//! Command-line driver: configuration, stage orchestration and run manifests.

pub mod args;
pub mod config;
pub mod manifest;
mod stages;

use std::fmt;

use clap::Parser;

pub use args::Cli;
pub use config::PipelineConfig;

/// A stage failure, split by exit status: 2 for configuration problems,
/// 1 for everything else.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Fatal(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Fatal(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Fatal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

impl From<opinion_core::Error> for Failure {
    fn from(e: opinion_core::Error) -> Self {
        match e {
            opinion_core::Error::Config(m) => Failure::Config(m),
            other => Failure::Fatal(other.to_string()),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    stages::dispatch(cli)
}

/// Parses the process arguments, runs the command and returns the exit status.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
