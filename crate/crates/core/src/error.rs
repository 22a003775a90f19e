use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A required field is missing or has the wrong JSON type.
    #[error("schema error: {0}")]
    Schema(String),
    /// A field is present but its value is out of range (NaN, negative dt, ...).
    #[error("value error: {0}")]
    Value(String),
    /// An identifier refers to a lane or track that does not exist.
    #[error("dangling reference: {0}")]
    Ref(String),
    #[error("snapshot interval {interval} s is not a positive multiple of dt = {dt} s")]
    Interval { interval: f64, dt: f64 },
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("no candidate region left for placement")]
    Exhausted,
    #[error("vehicle `{0}` is not present in the scene")]
    MissingVehicle(String),
    #[error("scenario lists are not aligned: {0}")]
    Align(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("weights file {path}: {detail}")]
    Weights { path: PathBuf, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
