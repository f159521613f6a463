use thiserror::Error;

/// Errors raised by the construction, evaluation and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameter {theta:?} lies outside the parameter set")]
    OutsideParameterSet { theta: Vec<f64> },

    #[error("parameter {theta:?} is not interior to the parameter set")]
    NotInterior { theta: Vec<f64> },

    #[error("{what}: {count} exceeds the cap of {cap}")]
    CapExceeded { what: &'static str, count: f64, cap: f64 },

    #[error("a codebook of {messages} messages does not fit in a type class of {class_size} words")]
    CodebookTooLarge { messages: f64, class_size: f64 },

    #[error("prior {prior} cannot be used with a family satisfying condition {tag}")]
    IncompatiblePrior { prior: String, tag: String },

    #[error("dispersion must be positive, got {0}")]
    NonPositiveDispersion(f64),

    #[error("no candidate input distribution achieves a positive bound")]
    NoPositiveBound,

    #[error("the expectation defining the divergence does not exist")]
    Divergent,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
