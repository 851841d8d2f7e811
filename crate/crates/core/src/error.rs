use std::path::PathBuf;

use crate::datastore::StreamKey;
use crate::timeframe::TimeFrame;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("metadata file missing: {0}")]
    MissingMetadata(PathBuf),
    #[error("unsupported format version {found} (this build reads version {supported})")]
    FormatVersion { found: i64, supported: i64 },
    #[error("invalid metadata in {file}: {message}")]
    Metadata { file: String, message: String },
    #[error("meter wiring cycle in building {building}: {cycle:?}")]
    WiringCycle { building: u32, cycle: Vec<u32> },
    #[error("unknown appliance type {name:?}{}", suggestion.as_ref().map(|s| format!(" (did you mean {s:?}?)")).unwrap_or_default())]
    UnknownApplianceType {
        name: String,
        suggestion: Option<String>,
    },
    #[error("stream not found: {0}")]
    StreamNotFound(StreamKey),
    #[error("meter not found: building {building} meter {meter}")]
    MeterNotFound { building: u32, meter: u32 },
    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },
    #[error(
        "out-of-order append to {key}: chunk starts at {start} before stream end {stream_end}"
    )]
    OutOfOrderAppend {
        key: StreamKey,
        start: f64,
        stream_end: f64,
    },
    #[error("invalid selection query: {0}")]
    Query(String),
    #[error("cannot merge accumulators with overlapping frames: {a} vs {b}")]
    OverlappingFrames { a: TimeFrame, b: TimeFrame },
    #[error("pipeline preconditions unmet: {0}")]
    Preconditions(String),
    #[error("building {building} has no site meter")]
    NoSiteMeter { building: u32 },
    #[error("undefined statistic: {0}")]
    Undefined(String),
    #[error("training failed for building {building} meter {meter}: {message}")]
    Training {
        building: u32,
        meter: u32,
        message: String,
    },
    #[error("state-combination count {combinations} exceeds limit {limit}; lower k_max")]
    CombinationLimit { combinations: u128, limit: u64 },
    #[error("model file {file}: {message}")]
    Model { file: String, message: String },
    #[error("destination {0} exists and is not empty (use force to overwrite)")]
    DestinationNotEmpty(PathBuf),
    #[error("{0}")]
    Invalid(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit-code class used by the CLI: validation errors vs I/O errors.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
