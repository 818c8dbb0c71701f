use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("ingestion error at row {row}, column '{column}': {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error{}: {message}", layer.map(|l| format!(" in layer {l}")).unwrap_or_default())]
    Numeric {
        layer: Option<usize>,
        message: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("estimator error: {0}")]
    Estimator(String),

    #[error("problem too large: {0}")]
    Budget(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error document.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Ingestion { .. } => "ingestion",
            Error::Config(_) => "config",
            Error::Numeric { .. } => "numeric",
            Error::Contract(_) => "contract",
            Error::Training { .. } => "training",
            Error::Estimator(_) => "estimator",
            Error::Budget(_) => "budget",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
