use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed npy header: {0}")]
    MalformedHeader(String),

    #[error("unsupported npy dtype {0:?}")]
    UnsupportedDtype(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid metadata: {0}")]
    Metadata(String),

    #[error("non-finite value at flat index {index} and no validity mask covers it")]
    NonFinite { index: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("expected field in {expected} space, found {found}")]
    WrongSpace { expected: &'static str, found: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("target point outside source grid: {0}")]
    OutsideSource(String),

    #[error("target cell {row},{col} contains no fine samples")]
    EmptyCell { row: usize, col: usize },

    #[error("calendar error: {0}")]
    Calendar(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("degenerate bounds: {0}")]
    DegenerateBounds(String),

    #[error("date misalignment: {0}")]
    DateMismatch(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("missing channel: {0}")]
    MissingChannel(String),

    #[error("driver gap: {0}")]
    DriverGap(String),

    #[error("external predictor failed: {0}")]
    External(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
