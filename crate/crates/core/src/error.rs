use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    Token { id: u32, vocab: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("edit {0} already applied")]
    DuplicateEdit(u64),

    #[error("non-finite loss {loss} at step {step} of edit {edit_id}")]
    NonFinite {
        edit_id: u64,
        step: usize,
        loss: f64,
    },

    #[error("edit {edit_id} failed: {source}")]
    EditFailed {
        edit_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("editor state was built on backbone {expected}, got {found}")]
    Backbone { expected: String, found: String },

    #[error("bad magic bytes, not a {0} file")]
    Magic(&'static str),

    #[error("unsupported {kind} format version {found} (expected {expected})")]
    Version {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("checksum mismatch, file is corrupted")]
    Checksum,

    #[error("malformed {0} file: {1}")]
    Format(&'static str, String),

    #[error("{path}: {source}")]
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

    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Precondition(_) => "precondition",
            Error::Length { .. } => "length",
            Error::Token { .. } => "token",
            Error::Dimension { .. } => "dimension",
            Error::Parameter(_) => "parameter",
            Error::Config(_) => "config",
            Error::Schema { .. } => "schema",
            Error::DuplicateEdit(_) => "duplicate-edit",
            Error::NonFinite { .. } => "non-finite",
            Error::EditFailed { .. } => "edit-failed",
            Error::Backbone { .. } => "backbone",
            Error::Magic(_) => "magic",
            Error::Version { .. } => "version",
            Error::Checksum => "checksum",
            Error::Format(..) => "format",
            Error::Io { .. } => "io",
        }
    }
}
