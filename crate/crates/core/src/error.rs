use std::path::PathBuf;

/// Errors raised by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no tensors")]
    NoTensors,

    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),

    #[error("not an FDT1 file")]
    BadMagic,

    #[error("corrupt container: {0}")]
    CorruptContainer(String),

    #[error("unsupported dtype `{0}`")]
    UnsupportedDtype(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate direction: output channel {channel} has zero norm")]
    DegenerateDirection { channel: usize },

    #[error("index {index} out of range for vocabulary of {vocab}")]
    OutOfVocabulary { index: usize, vocab: usize },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("spec parse error: {0}")]
    SpecParse(#[from] serde_json::Error),

    #[error("missing weight `{0}`")]
    MissingWeight(String),

    #[error("over-pruned layer: {0}")]
    OverPruned(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("unsupported wav codec: {0}")]
    UnsupportedCodec(String),

    #[error("malformed wav: {0}")]
    MalformedWav(String),

    #[error("cannot restrict execution to a single thread: {0}")]
    ThreadRestriction(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
