use std::path::PathBuf;

/// Errors produced by the library and the `smd` harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    TrainingDivergence { epoch: usize, batch: usize },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("state error: {0}")]
    State(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("data hygiene violation: {0}")]
    DataHygiene(String),

    #[error("task mismatch: {0}")]
    TaskMismatch(String),

    #[error("no grid cell within the KL band; closest cell sigma={sigma}, rho={rho}, mean_kl={mean_kl}")]
    OutOfBand { sigma: f64, rho: f64, mean_kl: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the `smd` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::TrainingDivergence { .. } => 3,
            Error::OutOfBand { .. } => 4,
            Error::DataHygiene(_) => 5,
            Error::TaskMismatch(_) => 6,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
