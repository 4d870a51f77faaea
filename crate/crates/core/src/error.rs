use thiserror::Error;

/// Errors surfaced by every module. The variants map onto the CLI exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Parameters outside the model's admissible range.
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller broke an operation's precondition (missing field, wrong shape).
    #[error("contract error: {0}")]
    Contract(String),
    /// A finite window or truncation was not large enough for an exact answer.
    #[error("window error: {0}")]
    Window(String),
    /// Memory or iteration budget exceeded.
    #[error("resource error: {0}")]
    Resource(String),
    /// A numerical procedure failed to reach its target accuracy.
    #[error("numerical error: {0}")]
    Numeric(String),
    /// Configuration parsing or validation failure.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code: 1 usage, 2 model domain, 3 resource.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 1,
            Error::Domain(_) => 2,
            Error::Window(_) | Error::Resource(_) | Error::Numeric(_) => 3,
        }
    }

    /// The message without the variant prefix.
    pub fn message(&self) -> &str {
        match self {
            Error::Domain(m)
            | Error::Contract(m)
            | Error::Window(m)
            | Error::Resource(m)
            | Error::Numeric(m)
            | Error::Config(m) => m,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
