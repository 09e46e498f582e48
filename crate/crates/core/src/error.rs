use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("degenerate mask: every position of slice {slice} is masked")]
    DegenerateMask { slice: usize },

    #[error("degenerate vector: zero norm in {0}")]
    DegenerateVector(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training state error: {0}")]
    TrainingState(String),

    #[error("sequence of length {len} exceeds max_len {max_len}")]
    Length { len: usize, max_len: usize },

    #[error("token id {id} outside vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("alignment error: {left} source lines vs {right} target lines")]
    Alignment { left: usize, right: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unknown synset id {0:?}")]
    Lexicon(String),

    #[error("example with {tokens} tokens exceeds batch capacity {max_tokens}")]
    Capacity { tokens: usize, max_tokens: usize },

    #[error("lemma {lemma:?} not found in sentence {sentence}")]
    AbsentLemma { lemma: String, sentence: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_)
            | Error::Alignment { .. }
            | Error::Parse { .. }
            | Error::Lexicon(_)
            | Error::Capacity { .. }
            | Error::AbsentLemma { .. }
            | Error::Checkpoint(_)
            | Error::Io { .. }
            | Error::Label { .. }
            | Error::Length { .. }
            | Error::Vocabulary { .. } => 2,
            Error::Dimension { .. }
            | Error::DegenerateMask { .. }
            | Error::DegenerateVector(_)
            | Error::Numerical(_)
            | Error::TrainingState(_) => 3,
        }
    }
}
