use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution spec: {0}")]
    Spec(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("model interface error: {0}")]
    Interface(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("bound inapplicable at layer {layer}: ||U||_2 = {perturbation} > ||W||_2 / d = {limit}")]
    BoundInapplicable {
        layer: usize,
        perturbation: f64,
        limit: f64,
    },

    #[error("structure mismatch: {0}")]
    Structure(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("stage `{stage}` failed (seed {seed}): {source}")]
    Stage {
        stage: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_stage(self, stage: &str, seed: u64) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage: stage.to_string(),
                seed,
                source: Box::new(other),
            },
        }
    }
}
