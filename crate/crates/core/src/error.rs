use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("process of device {device} diverged at slot {slot}")]
    Divergence { device: usize, slot: u64 },

    #[error("device {device} has no stored sample to estimate from")]
    MissingSample { device: usize },

    #[error("sample slot {sample_slot} is later than the current slot {now}")]
    SampleFromFuture { sample_slot: u64, now: u64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("refusing to enumerate {devices} devices (limit {limit})")]
    EnumerationBound { devices: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid trace: {0}")]
    Trace(String),

    #[error("{context} (device {device}, slot {slot}): {source}")]
    AtSlot {
        device: usize,
        slot: u64,
        context: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_slot(self, device: usize, slot: u64, context: &'static str) -> Self {
        match self {
            // already carries its own location
            Error::Divergence { .. } | Error::AtSlot { .. } => self,
            other => Error::AtSlot {
                device,
                slot,
                context,
                source: Box::new(other),
            },
        }
    }
}
