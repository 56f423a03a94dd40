use reaction_forge_nn::NnError;
use reaction_forge_sim::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("config error: {0}")]
    Config(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<ForgeError>,
    },
    #[error("no demonstrations survived curation; retrain the tracker (more iterations or retries)")]
    EmptyDemoSet,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ForgeError {
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ ForgeError::Stage { .. } => e,
            e => ForgeError::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = ForgeError> = std::result::Result<T, E>;
