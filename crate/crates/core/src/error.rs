use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: {detail}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        detail: String,
    },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("class {class} has zero frequency; exclude it or use the `none` weighting scheme")]
    ZeroFrequency { class: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{0} is undefined for this input")]
    Undefined(&'static str),
}

impl Error {
    pub(crate) fn shape(op: &'static str, dim: &'static str, detail: String) -> Self {
        Error::Shape { op, dim, detail }
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }
}
