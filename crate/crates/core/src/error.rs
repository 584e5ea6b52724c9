use std::path::PathBuf;

/// Errors raised by the library and the `phi4` command line tool.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("vertex index {index} out of range for {count} vertices")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("size mismatch in {what}: expected {expected}, got {got}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("operation requires {0}")]
    Unsupported(String),

    #[error("distribution is not normalizable: {0}")]
    NonIntegrable(String),

    #[error("graph with {vertices} vertices exceeds the quadrature limit of {limit}")]
    TooLarge { vertices: usize, limit: usize },

    #[error("partition function overflows f64 (ln Z = {0})")]
    Overflow(f64),

    #[error("series of length {len} is too short (need at least {min})")]
    TooShort { len: usize, min: usize },

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    #[error("training diverged at epoch {epoch}: gradient norm {norm:e}")]
    Diverged { epoch: usize, norm: f64 },

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Diverged { .. } | Error::Overflow(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
