use std::io;

/// Errors raised across the reconstruction pipeline.
///
/// The variants are grouped by how a caller is expected to react: schema and
/// invariant problems mean the input is malformed, configuration problems mean
/// the inputs are well formed but disagree with each other, numeric problems
/// mean a computation produced non-finite values.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invariant violated in `{field}`: {detail}")]
    Invariant { field: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn invariant(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Invariant {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Stable process exit code for scripts: 2 input/schema, 3 config mismatch,
    /// 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Schema(_) | Error::Invariant { .. } | Error::Image(_) => 2,
            Error::Config(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
