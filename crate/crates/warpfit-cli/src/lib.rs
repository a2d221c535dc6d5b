//! Library side of the `warpfit` binary: CSV ingestion, command execution,
//! and JSON report serialization. The binary in `main.rs` only parses
//! arguments and maps outcomes to exit codes.

pub mod commands;
pub mod dataset;
pub mod report;

use thiserror::Error;

/// How a completed command run ended. Test commands distinguish a rejected
/// null hypothesis from a clean pass; everything else always completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    Rejected,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// Structural problems with an input file (missing or wrong header).
    #[error("format error: {0}")]
    Format(String),
    /// A row that could not be parsed, with its 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Domain(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] warpfit::Error),
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
}
