use thiserror::Error;

/// Error kinds shared by every module. The CLI maps them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {msg} (relative residual {residual:.3e})")]
    Numerical { msg: String, residual: f64 },
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>, residual: f64) -> Self {
        Error::Numerical { msg: msg.into(), residual }
    }

    /// Process exit code used by the CLI runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Data(_) | Error::Io(_) => 2,
            Error::Numerical { .. } => 3,
            Error::Invariant(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
