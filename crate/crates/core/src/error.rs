use thiserror::Error;

/// Errors raised by the numerical library.
///
/// The CLI maps these onto exit codes through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of bounds for length {len}")]
    Bounds { index: usize, len: usize },

    #[error("series truncation cap {cap} reached with tail bound {achieved:e} (requested {requested:e})")]
    Truncation {
        cap: usize,
        achieved: f64,
        requested: f64,
    },

    #[error("accuracy error: error budget {budget:e} exceeds allowed {allowed:e} ({context})")]
    Accuracy {
        budget: f64,
        allowed: f64,
        context: String,
    },

    #[error("test set rejected: {0}")]
    NotInjective(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// 0 ok, 1 config, 2 accuracy/inconclusive, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::NotInjective(_) => 1,
            Error::Truncation { .. }
            | Error::Accuracy { .. }
            | Error::Inconclusive(_)
            | Error::Range(_) => 2,
            Error::Bounds { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
