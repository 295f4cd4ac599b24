use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("segment without members: segment {0}")]
    EmptySegment(usize),

    #[error("no thresholds")]
    NoThresholds,

    #[error("invalid occlusion bins: {0}")]
    InvalidBins(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible occlusion target after {attempts} attempts")]
    InfeasibleOcclusion { attempts: usize },

    #[error("class count mismatch: model has {model}, data has {data}")]
    ClassMismatch { model: usize, data: usize },

    #[error("non-finite loss {loss} on image {image_id} at iteration {iteration}")]
    NonFiniteLoss {
        image_id: String,
        iteration: u64,
        loss: f64,
    },

    #[error("invalid record {image_id}: {violations:?}")]
    InvalidRecord {
        image_id: String,
        violations: Vec<String>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
