use thiserror::Error;

pub type Result<T, E = MonitorError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("sketch is empty")]
    EmptySketch,

    #[error("incompatible sketches: {0}")]
    Incompatible(String),

    #[error("malformed document: field `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MonitorError {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        MonitorError::Parse {
            field: field.into(),
            message: message.into(),
        }
    }
}
