use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("context overflow: {len} tokens exceeds max_context {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("remote context overflow: {0}")]
    RemoteOverflow(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown token id {id} (vocab_size {vocab_size})")]
    UnknownToken { id: u32, vocab_size: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("non-finite value in hidden vector")]
    NonFinite,

    #[error("invalid mix weights alpha={alpha}, beta={beta}: {reason}")]
    InvalidWeights {
        alpha: f64,
        beta: f64,
        reason: &'static str,
    },

    #[error("malformed synthetic spec: {0}")]
    MalformedSpec(String),

    #[error("insufficient candidates: requested {requested}, have {available} covering mass {mass}")]
    InsufficientCandidates {
        requested: usize,
        available: usize,
        mass: f64,
    },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("backend unreachable at {endpoint}: {message}")]
    Unreachable { endpoint: String, message: String },

    #[error("protocol version mismatch: server speaks {got}, client expects {expected}")]
    ProtocolVersion { got: i64, expected: i64 },

    #[error("malformed response from {endpoint}: {message}")]
    MalformedResponse { endpoint: String, message: String },

    #[error("backend rejected request ({status}): {message}")]
    Remote { status: u16, message: String },

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("mixed tasks in one aggregate: {0} and {1}")]
    MixedTasks(String, String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures that originate in the model backend rather than in
    /// user-supplied configuration or data.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::Unreachable { .. }
                | Error::ProtocolVersion { .. }
                | Error::MalformedResponse { .. }
                | Error::Remote { .. }
                | Error::RemoteOverflow(_)
                | Error::Backend(_)
        )
    }

    pub fn is_overflow(&self) -> bool {
        matches!(self, Error::ContextOverflow { .. } | Error::RemoteOverflow(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
