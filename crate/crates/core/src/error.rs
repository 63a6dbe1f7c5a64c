//! Shared error type for the whole crate.
//!
//! Every fallible public operation returns `Result<T, PspcError>`. The
//! variants mirror the failure classes of the library: structural
//! mismatches, invalid parameters, numeric domain violations, and I/O.

use std::fmt;
use std::io;

/// Errors produced by dataset handling, denoisers, samplers, and file I/O.
#[derive(Debug)]
pub enum PspcError {
    /// Dimensions of an input do not match what the operation requires.
    ShapeMismatch(String),
    /// A dataset with zero images was supplied.
    EmptyDataset,
    /// A numeric value lies outside its documented range.
    RangeError(String),
    /// A byte stream or text file does not conform to its format.
    FormatError(String),
    /// A parameter combination is invalid (sizes, schedules, counts).
    ConfigError(String),
    /// A mathematical precondition is violated (for example t <= 0).
    DomainError(String),
    /// A heatmap has no positive mass, so no crop can be selected.
    DegenerateHeatmap,
    /// A pixel is covered by no crop in a patch set.
    UncoveredPixel { row: usize, col: usize },
    /// Requested data is absent (external dump misses a grid point).
    MissingData(String),
    /// An underlying I/O failure.
    Io(io::Error),
}

impl fmt::Display for PspcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PspcError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            PspcError::EmptyDataset => write!(f, "dataset contains no images"),
            PspcError::RangeError(msg) => write!(f, "value out of range: {msg}"),
            PspcError::FormatError(msg) => write!(f, "malformed input: {msg}"),
            PspcError::ConfigError(msg) => write!(f, "invalid configuration: {msg}"),
            PspcError::DomainError(msg) => write!(f, "domain error: {msg}"),
            PspcError::DegenerateHeatmap => write!(f, "heatmap has no positive entries"),
            PspcError::UncoveredPixel { row, col } => {
                write!(f, "pixel ({row}, {col}) is covered by no crop")
            }
            PspcError::MissingData(msg) => write!(f, "missing data: {msg}"),
            PspcError::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for PspcError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            PspcError::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for PspcError {
    fn from(err: io::Error) -> Self {
        PspcError::Io(err)
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, PspcError>;
