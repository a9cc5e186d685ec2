use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown symbol {symbol:?} at character {position}")]
    UnknownSymbol { symbol: String, position: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("vocabulary of size {0} has no second-best logit")]
    VocabTooSmall(usize),

    #[error("non-finite logit at row {row}, column {col}")]
    NonFiniteLogit { row: usize, col: usize },

    #[error("logit matrix has {got} rows, expected {expected}")]
    RowMismatch { expected: usize, got: usize },

    #[error("oracle target exhausted: position {position} requested, target has {available} tokens")]
    TargetExhausted { position: usize, available: usize },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("flip-rate window [{lo}, {hi}] contains no steps")]
    EmptyWindow { lo: f64, hi: f64 },

    #[error("run has zero denoiser calls")]
    ZeroCalls,

    #[error("invalid value for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{scheduler} with seed {seed}: {source}")]
    Run {
        scheduler: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
