use thiserror::Error;

/// Errors raised by the simulation and estimation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("{module}: domain error: {msg}")]
    Domain { module: &'static str, msg: String },

    /// A numerical procedure failed to reach its accuracy target.
    #[error("{module}: numerical failure: {msg}")]
    Numeric { module: &'static str, msg: String },

    /// A likelihood maximum fell on the edge of the scanned interval.
    #[error("inference: likelihood maximum on scan boundary (index {index} of {len})")]
    ScanBoundary { index: usize, len: usize },

    /// Configuration text could not be parsed or validated.
    #[error("config line {line}: key `{key}`: {msg}")]
    Config {
        line: usize,
        key: String,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(module: &'static str, msg: impl Into<String>) -> Error {
    Error::Domain {
        module,
        msg: msg.into(),
    }
}

pub(crate) fn numeric(module: &'static str, msg: impl Into<String>) -> Error {
    Error::Numeric {
        module,
        msg: msg.into(),
    }
}
