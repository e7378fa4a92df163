//! Loading, running and reporting for the `herglotz` command-line tool.

pub mod output;
pub mod problem;
pub mod runner;

use std::path::PathBuf;

use thiserror::Error;

pub use problem::{load_problem, parse_problem, Kind, Problem, ProblemFile};
pub use runner::{certify, run, Check, RunOutput, RunReport, VariationReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid problem file: {0}")]
    Schema(String),
    #[error("{field}: {source}")]
    Expression {
        field: String,
        #[source]
        source: herglotz::Error,
    },
    #[error("solver failed: {0}")]
    Solver(#[source] herglotz::Error),
}

impl CliError {
    /// Process exit status: 2 for bad input, 3 for solver failures, 1 when
    /// results cannot be written.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Schema(_) | CliError::Expression { .. } => 2,
            CliError::Solver(_) => 3,
            CliError::Write { .. } => 1,
        }
    }
}

/// Exit status when every invariant check passes.
pub const EXIT_OK: i32 = 0;
/// Exit status when the solver succeeded but a recomputed check failed.
pub const EXIT_INVARIANT: i32 = 4;
