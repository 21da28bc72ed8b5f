//! Error and diagnostic types shared across the crate.

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

/// Hard failures: bad input files, invalid configuration, impossible requests.
#[derive(Debug, Error)]
pub enum TrpError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// `row` and `col` are 1-based positions in the source file (header is row 1).
    #[error("parse error at row {row}, column {col}: {message}")]
    ParseError { row: usize, col: usize, message: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("invalid ticker: {0}")]
    InvalidTicker(String),

    #[error("duplicate ticker: {0}")]
    DuplicateTicker(String),

    #[error("unknown ticker in signals: {0}")]
    UnknownTicker(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("history has {periods} period(s); at least {required} required")]
    InsufficientHistory { periods: usize, required: usize },

    #[error("lookback {lookback} exceeds history length {periods}")]
    LookbackExceedsHistory { lookback: usize, periods: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Nothing passed the activity filter. `allocate` converts this into an
    /// all-zero portfolio plus [`Diagnostic::EmptyActiveSet`].
    #[error("active set is empty")]
    EmptyActiveSet,

    #[error("fixed root index {0} is not in the active set")]
    FixedIndexNotActive(usize),

    #[error("no sector ETFs in the active set")]
    NoSectorEtfs,

    #[error("brute-force spanning tree enumeration supports at most {max} nodes, got {n}")]
    UniverseTooLarge { n: usize, max: usize },

    #[error("inconsistent flow-model labels: {0}")]
    InconsistentLabels(String),

    #[error("correlation tiers are not strictly ordered: basket={basket}, sector={sector}, cross={cross}")]
    DegenerateTiers { basket: f64, sector: f64, cross: f64 },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TrpError> = std::result::Result<T, E>;

/// Non-fatal conditions that leave the caller with a (possibly zero) portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostic {
    /// No asset passed the activity filter.
    EmptyActiveSet,
    /// The pre-normalization exposures had zero L1 norm.
    DegenerateSignal,
    /// Clipping and thresholding removed every position.
    AllWeightsPruned,
}

impl Diagnostic {
    pub fn message(self) -> &'static str {
        match self {
            Diagnostic::EmptyActiveSet => "no asset passed the activity filter; portfolio is empty",
            Diagnostic::DegenerateSignal => "exposures have zero gross; portfolio is empty",
            Diagnostic::AllWeightsPruned => "post-processing removed every position",
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}
