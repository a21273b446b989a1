use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// True for errors caused by bad user input (flags, config values, paths)
    /// rather than by a failure while computing.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Io(_))
    }
}
