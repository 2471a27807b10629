//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by ingestion, scoring, triage, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("line {line}, column {column}: probability {value:?} outside [0, 1] (example {example_id:?})")]
    ProbabilityOutOfRange {
        line: u64,
        column: String,
        value: String,
        example_id: String,
    },

    #[error("line {line}: expected {expected} member predictions, found {found}")]
    InconsistentEnsembleSize {
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("duplicate example id {example_id:?}")]
    DuplicateExampleId { example_id: String },

    #[error("example {example_id:?}: severity level {severity} is inconsistent with label {label} under the referable convention")]
    SeverityLabelMismatch {
        example_id: String,
        severity: u8,
        label: u8,
    },

    #[error("dataset contains no records")]
    EmptyDataset,

    #[error("metric {metric} undefined for example {example_id:?}: {reason}")]
    MetricUndefined {
        metric: String,
        example_id: String,
        reason: String,
    },

    #[error("no records are predicted negative; nothing to triage")]
    EmptyNegativeSet,

    #[error("example {example_id:?} carries no severity level")]
    MissingSeverity { example_id: String },

    #[error("score report does not cover the dataset: {reason}")]
    ReportMismatch { reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sample variance is zero; cannot fit a beta distribution to a point mass")]
    ZeroVariance,

    #[error("moment estimates not fittable: sample variance {variance} >= m(1-m) = {limit}")]
    Unfittable { variance: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
