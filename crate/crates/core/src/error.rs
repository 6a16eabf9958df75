use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("duplicate id `{id}` on line {line} (first seen on line {first_line})")]
    DuplicateId {
        id: String,
        first_line: usize,
        line: usize,
    },

    #[error("line {line}: dangling reference `{from}` -> `{to}`")]
    DanglingReference {
        line: usize,
        from: String,
        to: String,
    },

    #[error("unsupported language tag `{0}`")]
    UnsupportedLanguage(String),

    #[error("document `{doc_id}`: cannot lex byte offset {offset}")]
    Unlexable { doc_id: String, offset: usize },

    #[error("document `{0}` has no title")]
    MissingTitle(String),

    #[error("document `{doc_id}`: span {start}..{end} ({surface:?}) does not match the body tokens")]
    SpanMismatch {
        doc_id: String,
        start: usize,
        end: usize,
        surface: String,
    },

    #[error("sentinel {0} appears in the source but not in the target")]
    MissingSentinel(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("model fingerprint mismatch: index built with {index}, query encoded with {query}")]
    FingerprintMismatch { index: String, query: String },

    #[error("query `{0}` has no judgments")]
    MissingJudgments(String),

    #[error("embedding {0} has zero norm")]
    ZeroNorm(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
