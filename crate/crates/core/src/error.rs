use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("malformed frame {file}: expected {expected} rows, found {found}")]
    MalformedFrame { file: PathBuf, expected: usize, found: usize },
    #[error("parse error in {file} at row {row}: {msg}")]
    Parse { file: PathBuf, row: usize, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate scale on channel {channel}: min = max = {value}")]
    DegenerateScale { channel: usize, value: f64 },
    #[error("size error: {0}")]
    Size(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("container error: {0}")]
    Container(String),
    #[error("leakage detected: {0}")]
    Leakage(String),
}

impl From<autograd::Error> for Error {
    fn from(e: autograd::Error) -> Self {
        match e {
            autograd::Error::Shape(m) => Error::Shape(m),
            autograd::Error::Index(m) => Error::Range(m),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
