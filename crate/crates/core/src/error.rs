use std::path::PathBuf;

/// Errors produced anywhere in the identification pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("label {label} out of range [0, {bound})")]
    LabelOutOfRange { label: usize, bound: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }
}
