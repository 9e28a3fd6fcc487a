use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("zero dynamic range")]
    ZeroDynamicRange,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid tensor `{name}`: {reason}")]
    InvalidTensor { name: String, reason: String },

    #[error("no activation statistics for tensor `{0}`")]
    MissingStats(String),

    #[error("corrupt stream")]
    CorruptStream,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),

    #[error("checksum mismatch in chunk {chunk}")]
    ChecksumMismatch { chunk: usize },

    #[error("corrupt payload in chunk {chunk}: {source}")]
    ChunkCorrupt {
        chunk: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("truncated file: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("malformed container: {0}")]
    Malformed(String),

    #[error("plan covers {plan} chunks but the stream has {chunks}")]
    PlanMismatch { plan: usize, chunks: usize },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    /// Wraps the error with a human-readable prefix, e.g. the tensor being processed.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Whether the error is an internal invariant violation rather than bad input.
    pub fn is_internal(&self) -> bool {
        match self {
            Error::Internal(_) => true,
            Error::Context { source, .. } | Error::ChunkCorrupt { source, .. } => {
                source.is_internal()
            }
            _ => false,
        }
    }
}
