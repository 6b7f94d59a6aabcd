use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field value {value} at cell ({row}, {col}) exceeded the blowup bound; dt is likely above the stability limit")]
    NumericalBlowup { row: usize, col: usize, value: f64 },

    #[error("diffusion and decay are both zero; the time step is unconstrained")]
    DegenerateParams,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid retrieval weights: {0}")]
    InvalidWeights(String),

    #[error("memory text is empty")]
    EmptyText,

    #[error("query text is empty")]
    EmptyQuery,

    #[error("importance {value} outside (0, {cap}]")]
    ImportanceOutOfRange { value: f64, cap: f64 },

    #[error("timestamp {requested} precedes {current}")]
    ClockSkew { requested: f64, current: f64 },

    #[error("unknown memory id {0}")]
    UnknownMemory(u64),

    #[error("store holds no memories")]
    EmptyStore,

    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("embedding has dimension {actual}, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
