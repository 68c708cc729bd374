use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: offset {offset} is outside text of length {len}")]
    OffsetOutOfRange { row: usize, offset: usize, len: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    Length { expected: usize, found: usize },
    #[error("missing prediction for post ids: {}", .0.join(", "))]
    MissingIds(Vec<String>),
    #[error("model bundle incompatible: {0}")]
    Incompatible(String),
    #[error("serialization: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 for bad input, 3 for model
    /// incompatibility, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Incompatible(_) => 3,
            Error::Format(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
