use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("decode error at byte offset {offset}: {reason}")]
    Decode { offset: usize, reason: String },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("encode error: {0}")]
    Encode(String),
    #[error("image {width}x{height} is too small (need at least 3x3)")]
    TooSmall { width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0} classes exceed the limit of 255")]
    TooManyClasses(usize),
    #[error("need at least 2 rows, got {0}")]
    InsufficientData(usize),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("no seed pixels supplied")]
    MissingSeeds,
    #[error("unexpected trimap value {value} at (x={x}, y={y})")]
    TrimapValue { value: u8, x: usize, y: usize },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("dataset is missing files: {}", .0.join(", "))]
    MissingFiles(Vec<String>),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Attaches the offending file path.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
