use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("alignment failed: {0}")]
    Alignment(String),

    #[error("feature extraction failed: {0}")]
    Feature(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("prediction failed: {0}")]
    Prediction(String),

    #[error("malformed model at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("unsupported model version {found} (expected {expected})")]
    UnsupportedVersion { found: u64, expected: u64 },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error in {path}: {message}")]
    Data { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn data(path: impl std::fmt::Display, msg: impl std::fmt::Display) -> Self {
        Error::Data {
            path: path.to_string(),
            message: msg.to_string(),
        }
    }
}
