use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid probability vector: {0}")]
    Probability(String),

    #[error("normalized loss is degenerate: inner loss is zero for every label")]
    DegeneratePrediction,

    #[error("loss `{0}` has no gradient")]
    UnsupportedGradient(String),

    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("cannot place class centers: {0}")]
    Geometry(String),

    #[error("IDX format error: {0}")]
    Format(String),

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape { context, expected, got }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
