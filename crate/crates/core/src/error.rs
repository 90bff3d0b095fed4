use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    Utf8 { path: PathBuf, offset: usize },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("row {id}: unknown label {label:?} for schema {schema}")]
    UnknownLabel {
        id: String,
        label: String,
        schema: String,
    },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing checkpoint component {0}")]
    MissingComponent(PathBuf),

    #[error("checkpoint format version {found} is not supported (reader supports {supported})")]
    FormatVersion { found: u32, supported: u32 },

    #[error("tensor {tensor}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),

    #[error("label {label} out of range for {n_labels} classes")]
    LabelOutOfRange { label: usize, n_labels: usize },

    #[error("no masked positions in batch; MLM loss is undefined")]
    NoMaskedPositions,

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or arguments rather than by the
    /// environment (I/O) at run time.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFiniteGradient(_))
    }
}
