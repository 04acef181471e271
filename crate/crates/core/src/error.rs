use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("rejected input: {0}")]
    InvalidInput(String),
    #[error("episode exhausted: step {step} reached horizon {horizon}")]
    EpisodeExhausted { step: usize, horizon: usize },
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("layout parse error on line {line}: {msg}")]
    Layout { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
