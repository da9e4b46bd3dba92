use std::path::PathBuf;

/// Errors raised anywhere in the strain modelling pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("input {value} lies outside the approximation domain [-{half_width}, {half_width}]")]
    DomainOverflow { value: f64, half_width: f64 },

    #[error("non-finite log density at coordinate {coordinate:?}: {detail}")]
    NumericalFailure {
        coordinate: Option<usize>,
        detail: String,
    },

    #[error("could not find a finite initial point after {attempts} attempts")]
    InitializationFailure { attempts: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {cause}")]
    Stage { stage: String, cause: Box<Error> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
