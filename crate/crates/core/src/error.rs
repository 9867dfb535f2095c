use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty trace")]
    EmptyTrace,

    #[error("unsorted trace: record {index} at {timestamp}s precedes its predecessor")]
    UnsortedTrace { index: usize, timestamp: f64 },

    #[error("no frames for user {0}")]
    NoFramesForUser(String),

    #[error("degenerate grouping: {0}")]
    DegenerateGrouping(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown station {0}")]
    UnknownStation(String),

    #[error("incomplete sweep: {0}")]
    IncompleteSweep(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("selection-only model")]
    SelectionOnly,

    #[error("degenerate period: no-offload and clairvoyant collision are equal")]
    DegeneratePeriod,

    #[error("trace exhausted: {0}")]
    TraceExhausted(String),

    #[error("unsupported model version {0}")]
    UnsupportedVersion(u32),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by bad user input or configuration rather than
    /// by a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
