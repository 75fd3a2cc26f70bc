//! Pipeline stages behind the `scopeprobe` command line.
//!
//! Each stage reads the run configuration and writes into its own
//! subdirectory of `output_dir`: `scores/`, `analysis/`, `hs/`, `figures/`.
//! Every figure is a view of a table written alongside it.

use std::path::Path;

use thiserror::Error;

mod analyze;
mod config;
mod figures;
mod hs;
mod report;
mod score;
mod table;
mod validate;

pub use analyze::{cmd_analyze, AnalyzeOptions, AnalyzeSummary};
pub use config::{Overrides, Run, RunConfig};
pub use hs::{cmd_hs, HsCell, HsSummary};
pub use report::cmd_report;
pub use score::{cmd_score, load_scores, ScoreFailure, ScoreRecord, ScoreSummary};
pub use table::g12;
pub use validate::{cmd_validate, Inputs, ValidationReport};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INVALID: i32 = 1;
    pub const PARTIAL: i32 = 2;
    pub const TRANSPORT_OR_CONFIG: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Analysis(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Transport(_) => exit::TRANSPORT_OR_CONFIG,
            _ => exit::INVALID,
        }
    }
}
