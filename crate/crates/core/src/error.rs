use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
///
/// Config errors are kept apart from runtime errors so the CLI can map them
/// onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: invalid value for `{key}`: {constraint}")]
    Validation { key: String, constraint: String },

    #[error("bsr: {0}")]
    BsrTable(String),

    #[error("bsr: index {index} out of range for a {bits}-bit table")]
    BsrIndex { index: u32, bits: u32 },

    #[error("radio: mcs table: {0}")]
    McsTable(String),

    #[error("radio: empty grant (prb_count must be at least 1)")]
    EmptyGrant,

    #[error("mac: feedback for unknown HARQ process {0}")]
    UnknownHarqProcess(u64),

    #[error("control: no priority class assigned to UE {0}")]
    MissingPriority(usize),

    #[error("metrics: percentile of an empty series")]
    EmptySeries,

    #[error("metrics: percentile {0} outside [0, 100]")]
    PercentileRange(f64),

    #[error("engine: invariant violated: {0}")]
    Invariant(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn validation(key: &str, constraint: impl Into<String>) -> Self {
        Error::Validation {
            key: key.to_string(),
            constraint: constraint.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the user's configuration rather than by a
    /// failure while running.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::BsrTable(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
