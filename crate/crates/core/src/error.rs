use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Tensor shapes incompatible for an operation.
    Shape(String),
    /// A NaN or infinity appeared in a forward or backward value.
    NonFinite(String),
    /// Caller-supplied argument violates a precondition.
    InvalidArgument(String),
    /// Invalid configuration (model, training, generation, experiment).
    Config(String),
    /// Backward called on a non-scalar, already-differentiated or foreign graph.
    Graph(String),
    /// Not enough frames to satisfy a per-cell request.
    InsufficientData(String),
    /// Malformed file contents.
    Format(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape mismatch: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::Config(m) => write!(f, "invalid config: {m}"),
            Error::Graph(m) => write!(f, "graph error: {m}"),
            Error::InsufficientData(m) => write!(f, "insufficient data: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
