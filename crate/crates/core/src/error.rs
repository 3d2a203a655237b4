use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("index {index} out of range for {len} nodes")]
    Index { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("overlap set is empty for contrast ({0}, {1})")]
    EmptyOverlap(usize, usize),

    #[error("exposure level {level} is missing{}", group.as_ref().map(|g| format!(" in group {g}")).unwrap_or_default())]
    MissingLevel { level: usize, group: Option<String> },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("data error at {location}: {message}")]
    Schema { location: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("group {group}: {source}")]
    InGroup {
        group: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn in_group(group: impl Into<String>, source: Error) -> Self {
        Error::InGroup {
            group: group.into(),
            source: Box::new(source),
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Schema { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
            Error::InGroup { source, .. } => source.exit_code(),
            _ => 4,
        }
    }
}
