use std::fmt;

/// Errors surfaced by the library. Each variant maps onto one CLI exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric fault in {site}: {detail}")]
    Numeric { site: String, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Error::Data(msg.to_string())
    }

    pub fn numeric(site: impl fmt::Display, detail: impl fmt::Display) -> Self {
        Error::Numeric { site: site.to_string(), detail: detail.to_string() }
    }

    /// Process exit code: 1 config, 2 data (including unreadable files), 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Numeric { .. } => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
