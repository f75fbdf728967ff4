use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the library.
#[derive(Debug)]
pub enum Error {
    /// Two operands have incompatible shapes.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A buffer length does not match the product of its shape.
    DataLength { expected: usize, got: usize },
    /// An axis argument is out of range for the tensor rank.
    InvalidAxis { axis: usize, rank: usize },
    /// A gather/group index points outside the source rows.
    IndexOutOfRange { index: usize, len: usize },
    /// The loss handed to backward is not a scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// A neighbor query asked for more neighbors than there are points.
    TooManyNeighbors { k: usize, n: usize },
    /// A scalar argument is outside its allowed range.
    InvalidArgument(String),
    /// Malformed configuration.
    Config(String),
    /// Malformed input file; `line` is 1-based when known.
    Parse {
        path: Option<PathBuf>,
        line: usize,
        message: String,
    },
    /// Checkpoint could not be decoded.
    Format(String),
    /// Training produced a non-finite loss.
    Diverged { epoch: usize, step: usize, loss: f64 },
    Io {
        path: Option<PathBuf>,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: Some(path.into()),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape volume {expected}")
            }
            Error::InvalidAxis { axis, rank } => {
                write!(f, "axis {axis} is out of range for rank {rank}")
            }
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for {len} rows")
            }
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::TooManyNeighbors { k, n } => {
                write!(f, "requested {k} neighbors from a cloud of {n} points")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Parse {
                path,
                line,
                message,
            } => match path {
                Some(p) => write!(f, "{}:{line}: {message}", p.display()),
                None => write!(f, "line {line}: {message}"),
            },
            Error::Format(msg) => write!(f, "checkpoint format error: {msg}"),
            Error::Diverged { epoch, step, loss } => write!(
                f,
                "training diverged at epoch {epoch}, step {step}: loss = {loss}"
            ),
            Error::Io { path, source } => match path {
                Some(p) => write!(f, "{}: {source}", p.display()),
                None => write!(f, "{source}"),
            },
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
