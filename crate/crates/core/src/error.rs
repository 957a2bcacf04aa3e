use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("all aggregation weights are zero")]
    ZeroWeights,

    #[error("target kind does not match model: {0}")]
    TargetKind(&'static str),

    #[error("invalid {field}: {reason}")]
    InvalidSpec { field: String, reason: String },

    #[error("non-finite parameter produced by {0}")]
    NonFinite(&'static str),

    #[error("no informative tier: every importance weight is zero")]
    NoInformativeTier,

    #[error("aggregate does not match the supplied updates (max deviation {deviation:e})")]
    AggregateMismatch { deviation: f64 },

    #[error("exact Shapley enumeration refused for {clients} clients (limit {limit}); use the estimator or a smaller coalition")]
    TooManyClients { clients: usize, limit: usize },

    #[error("{0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("trace error: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidSpec {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
