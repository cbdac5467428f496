use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("unit error: expected {expected}, found {found}")]
    Unit { expected: String, found: String },

    #[error("structure `{0}` has an empty mask")]
    EmptyMask(String),

    #[error("negative dose {value} at voxel {index}")]
    NegativeDose { index: usize, value: f64 },

    #[error("normalization failed: {0}")]
    Normalization(String),

    #[error("crop window {window:?} cannot contain structure `{structure}` (extent {extent:?})")]
    CropInfeasible {
        structure: String,
        window: [usize; 3],
        extent: [usize; 3],
    },

    #[error("structure `{0}` not present in case")]
    MissingStructure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures of the numerics (NaN, divergence) rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
