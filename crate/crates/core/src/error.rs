use std::path::PathBuf;

use thiserror::Error;

use crate::camera::CalibrationError;
use crate::geometry::GeometryError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pitch template: {0}")]
    InvalidTemplate(String),
    #[error("unknown keypoint id {0}")]
    UnknownKeypoint(usize),
    #[error("unknown marking class {0:?}")]
    UnknownClass(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures reading or writing files (as opposed to bad content).
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
