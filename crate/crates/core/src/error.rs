use thiserror::Error;

/// Every failure the toolkit reports. Variants map onto the error classes of
/// the public operations; the CLI maps them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("codec error: {0}")]
    Codec(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("no crossover: {0}")]
    NoCrossover(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error{}: {message}", .image.map(|i| format!(" (image {i})")).unwrap_or_default())]
    Transport {
        image: Option<usize>,
        message: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn transport(image: Option<usize>, message: impl Into<String>) -> Self {
        Error::Transport {
            image,
            message: message.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(std::io::Error::other(e))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
