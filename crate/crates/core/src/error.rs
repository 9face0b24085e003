use thiserror::Error;

/// Crate-wide error type. Each variant maps to an error kind named in the
/// operation contracts; `kind()` is the stable machine-parsable prefix the
/// CLI prints.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("out-of-vocabulary words: {}", words.join(" "))]
    Oov { words: Vec<String> },

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("stage order error: {0}")]
    StageOrder(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable one-word kind used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::State(_) => "state",
            Error::Parse { .. } => "parse",
            Error::Oov { .. } => "oov",
            Error::Vocabulary(_) => "vocabulary",
            Error::Data(_) => "data",
            Error::Contract(_) => "contract",
            Error::Integrity(_) => "integrity",
            Error::StageOrder(_) => "stage-order",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
