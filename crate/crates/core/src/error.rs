use thiserror::Error;

/// Errors surfaced by the localization engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent shapes, pitches or class tables.
    #[error("configuration error: {0}")]
    Config(String),

    /// A binary exchange file has the wrong magic, version or header.
    #[error("format error: {0}")]
    Format(String),

    #[error("format error: truncated {what}, missing {missing} bytes")]
    Truncated { what: &'static str, missing: usize },

    #[error("XML parse error at byte {offset}: {message}")]
    Xml { offset: u64, message: String },

    #[error("unsupported OSM API version {0:?} (expected \"0.6\")")]
    UnsupportedVersion(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("throttled by {endpoint} (HTTP {status}) after {attempts} attempts")]
    Throttled {
        endpoint: String,
        status: u16,
        attempts: u32,
    },

    /// A probability computation has no mass left to normalize.
    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
