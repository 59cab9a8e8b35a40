use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("home {home} is not deployed on day {day} (starts on day {start})")]
    NotDeployed { home: String, day: u32, start: u32 },

    #[error("no data available on day {0}")]
    NoData(u32),

    #[error("metric is undefined: {0}")]
    UndefinedMetric(String),

    #[error("incomplete input: {0}")]
    IncompleteInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
