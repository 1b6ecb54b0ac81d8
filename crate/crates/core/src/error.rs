use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible.
    Shape { op: &'static str, detail: String },
    /// A primitive produced NaN or infinity.
    NonFinite { op: &'static str },
    /// A precondition of an operation was violated by the caller.
    Contract(String),
    /// Invalid configuration value.
    Config(String),
    /// Unknown id (phone, parameter name, ...).
    Lookup(String),
    /// Input data violates a schema invariant.
    Validation { record: Option<usize>, field: String, detail: String },
    /// Training diverged or an optimizer step saw a non-finite value.
    Numeric(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn validation(record: Option<usize>, field: &str, detail: impl Into<String>) -> Self {
        Error::Validation { record, field: field.into(), detail: detail.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "dimension error in {op}: {detail}"),
            Error::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Lookup(msg) => write!(f, "lookup failed: {msg}"),
            Error::Validation { record: Some(i), field, detail } => {
                write!(f, "record {i}, field `{field}`: {detail}")
            }
            Error::Validation { record: None, field, detail } => write!(f, "field `{field}`: {detail}"),
            Error::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
