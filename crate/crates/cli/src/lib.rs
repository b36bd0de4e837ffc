//! Scenario ingestion, command dispatch and report emission.

pub mod report;
pub mod run;
pub mod scenario;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("schema error at line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },
    #[error("{field}: {message} at byte {offset}")]
    Expression { field: String, offset: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{command}: {message}")]
    Command { command: String, message: String },
}
