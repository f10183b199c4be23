use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation's precondition (shapes, range tags, domains).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("non-finite value in loss term `{term}` at iteration {iteration}")]
    Numeric { term: String, iteration: u64 },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("tensor backend: {0}")]
    Backend(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier for machine consumption.
    pub fn reason_code(&self) -> &'static str {
        match self {
            Error::Contract(_) => "CONTRACT",
            Error::Config(_) => "CONFIG",
            Error::Pairing(_) => "PAIRING",
            Error::Io { .. } => "IO",
            Error::Image { .. } => "IO",
            Error::Numeric { .. } => "NUMERIC",
            Error::Incompatible(_) => "INCOMPATIBLE",
            Error::Backend(_) => "BACKEND",
        }
    }
}

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(format!($($arg)*))
    };
}
pub(crate) use contract;
