use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // taxonomy / prompts
    #[error("unknown prompt method `{0}`")]
    UnknownMethod(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("duplicate id `{0}`")]
    Duplicate(String),
    #[error("no representation for label `{label}` in context `{context}`")]
    MissingRepresentation { label: String, context: String },
    #[error("representation index {index} out of range for `{label}`/{context} (len {len})")]
    IndexOutOfRange {
        label: String,
        context: String,
        index: usize,
        len: usize,
    },
    #[error("lexicon yields no entries for label `{0}`")]
    LabelWithoutEntries(String),
    #[error("malformed record at {source_name}:{line}: {reason}")]
    MalformedRecord {
        source_name: String,
        line: usize,
        reason: String,
    },

    // corpus
    #[error("label token `{token}` at row {row} has no mapping")]
    UnmappedLabel { token: String, row: usize },
    #[error("corpus `{0}` has no instances")]
    EmptyCorpus(String),
    #[error("sample size {n} out of range for corpus of {len}")]
    SampleOutOfRange { n: usize, len: usize },

    // scoring
    #[error("invalid score triple: {0}")]
    InvalidTriple(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unreachable at {endpoint}: {reason}")]
    BackendUnreachable { endpoint: String, reason: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend rejected oversized input: {0}")]
    OversizedInput(String),

    // aggregation / evaluation
    #[error("empty variant list")]
    EmptyVariants,
    #[error("empty method set")]
    EmptyMethodSet,
    #[error("inconsistent instance ids: expected `{expected}`, found `{found}`")]
    InconsistentInstances { expected: String, found: String },
    #[error("length mismatch: {0} gold vs {1} predicted")]
    LengthMismatch(usize, usize),
    #[error("score matrix incomplete: {0}")]
    IncompleteMatrix(String),

    // storage
    #[error("store corrupt at offset {offset}: {reason}")]
    StoreCorrupt { offset: u64, reason: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    // configuration
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read config {path}: {reason}")]
    ConfigFile { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 config/validation,
    /// 3 backend/protocol, 4 storage.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BackendUnreachable { .. }
            | Error::Protocol(_)
            | Error::OversizedInput(_)
            | Error::InvalidTriple(_) => 3,
            Error::StoreCorrupt { .. } | Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
