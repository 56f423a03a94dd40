use thiserror::Error;

/// Errors raised by the differentiable kernel and its checkpoint format.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
