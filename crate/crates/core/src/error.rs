use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("empty text after normalization")]
    EmptyText,
    #[error("character {0:?} is not in the vocabulary")]
    Vocab(char),
    #[error("symbol id {id} out of range for vocabulary of size {size}")]
    VocabId { id: usize, size: usize },
    #[error("attention: every key position is masked")]
    AllMasked,
    #[error("unsupported format in {path}: {field} ({detail})")]
    Format {
        path: String,
        field: &'static str,
        detail: String,
    },
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
