use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid character spec: {0}")]
    InvalidSpec(String),
    #[error("simulation blew up at step {step}: non-finite state")]
    Blowup { step: u64 },
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
