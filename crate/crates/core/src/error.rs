use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("non-finite {term} at iteration {iteration}: {value}")]
    NonFinite {
        term: String,
        iteration: u64,
        value: f64,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    #[error("png {}: {source}", path.display())]
    PngDecode {
        path: PathBuf,
        #[source]
        source: png::DecodingError,
    },

    #[error("png {}: {source}", path.display())]
    PngEncode {
        path: PathBuf,
        #[source]
        source: png::EncodingError,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Short machine-parseable category printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument(_) => "argument",
            Error::Config(_) => "config",
            Error::MissingGradient(_) | Error::UnknownParameter(_) => "parameter",
            Error::NonFinite { .. } => "non-finite",
            Error::Dataset(_) => "dataset",
            Error::Format { .. } | Error::PngDecode { .. } | Error::PngEncode { .. } => "format",
            Error::Io(_) => "io",
        }
    }
}
