use thiserror::Error;

/// A value or record violates a data-model invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("invalid coordinate: {0}")]
    Coordinate(String),
    #[error("sample {index}: timestamp {ts} does not follow {prev}")]
    NonMonotoneTimestamp { index: usize, prev: i64, ts: i64 },
    #[error("sample {index}: location and accuracy must be present together")]
    LocationAccuracyMismatch { index: usize },
    #[error("sample {index}: non-finite value")]
    NonFinite { index: usize },
    #[error("unknown incident type code {0}")]
    UnknownIncidentType(String),
    #[error("unknown {field} code {value}")]
    UnknownCode { field: &'static str, value: String },
    #[error("ride has no samples")]
    EmptyRide,
    #[error("incident {index}: timestamp {ts} outside ride span [{first}, {last}]")]
    IncidentOutsideSpan { index: usize, ts: i64, first: i64, last: i64 },
    #[error("ride time histogram must have 24 entries, got {0}")]
    HistogramLength(usize),
    #[error("wait duration {wait}s exceeds ride duration {ride}s")]
    WaitExceedsRide { wait: u64, ride: u64 },
    #[error("region identifier {0:?} is not allowed")]
    Region(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Failure while reading a ride or profile file.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: ValidationError },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

impl ParseError {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        ParseError::Format { line, message: message.into() }
    }
}
