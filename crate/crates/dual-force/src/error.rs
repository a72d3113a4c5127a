use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("expert state {state} does not appear in the offline dataset")]
    ExpertCoverage { state: usize },

    #[error("support violation: d2 is zero at index {index} while d1 is positive")]
    SupportViolation { index: usize },

    #[error("missing config key: {0}")]
    MissingConfig(&'static str),

    #[error("unknown scenario `{0}` (expected chain2, grid8-corridors, or grid-obstacle)")]
    UnknownScenario(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid { what, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
