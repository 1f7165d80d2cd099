use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Model parameters violate a structural requirement (for example `c <= s`).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A trajectory was evaluated outside the time window it stores.
    #[error(
        "history underflow: requested t = {t}, history covers [{earliest}, {latest}]; \
         the initial segment must cover a window of S(T) = {required_window}"
    )]
    HistoryUnderflow {
        t: f64,
        earliest: f64,
        latest: f64,
        required_window: f64,
    },

    /// A caller broke an API contract (non-monotone time, missing precondition...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A runtime invariant of the model failed.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// The Picard iteration stopped contracting.
    #[error("non-contraction: {0}")]
    NonContraction(String),

    /// A solver failed in a way that the theory excludes.
    #[error("internal error: {0}")]
    Internal(String),

    /// Configuration could not be parsed or validated.
    #[error("configuration error:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Process exit status: 1 for failed invariants, 3 for bad input, 4 for
    /// other runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvariantViolation(_) => 1,
            Error::Config(_) | Error::Usage(_) | Error::Parameter(_) | Error::Domain(_) => 3,
            Error::HistoryUnderflow { .. } | Error::NonContraction(_) | Error::Internal(_) | Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
