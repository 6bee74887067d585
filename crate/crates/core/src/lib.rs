//! Workbench for dialogue-oriented self-supervised pre-training at desk
//! scale: corpus ingestion and partitioning, Insertion/Deletion/Replacement
//! sample generation with an independent validator, a small transformer
//! encoder with three task heads and a GRU response matcher, training
//! regimes (pre-train / fine-tune / domain multi-task), and ranking metrics
//! for response selection.

pub mod corpus;
pub mod evaluation;
pub mod model;
pub mod samplegen;
pub mod seeding;
pub mod tokenizer;
pub mod training;

use thiserror::Error;

pub use ndiff::NdiffError;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("duplicate article id {id:?} at lines {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("invalid utf-8 in {path} at byte offset {offset}")]
    Utf8 { path: String, offset: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("no donor article available for {id:?}")]
    EmptyDonorPool { id: String },
    #[error("sample validation failed: {0}")]
    Validation(String),
    #[error("sequence needs {needed} tokens but max_len is {max}")]
    SequenceTooLong { needed: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error(transparent)]
    Autodiff(#[from] NdiffError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
