//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants carry enough
//! structure for callers to report precisely what went wrong (both shapes of
//! a mismatch, the line of a parse failure, the byte offset of a corrupt
//! file) without string-matching on messages.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Tensor operands with incompatible shapes, reported as `left` vs `right`.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A mask whose length does not match the tensor it gates.
    MaskLength { expected: usize, got: usize },
    /// An argument outside its documented domain (rates, dims, ranges).
    InvalidParameter { name: &'static str, message: String },
    /// NaN or infinity where a finite value is required.
    NonFinite { context: String },
    /// A gradient section turned non-finite during optimization.
    NonFiniteGradient { section: String },
    /// A slice bin received more points than the configured capacity.
    BinCapacity {
        bin: usize,
        count: usize,
        capacity: usize,
    },
    /// Point cloud whose x extent is a single value; slicing is undefined.
    DegenerateRange { x_min: f64, x_max: f64 },
    /// An operation that requires at least one element got none.
    EmptyInput(&'static str),
    /// Malformed binary payload. `offset` is the byte position of the fault.
    Format { offset: u64, message: String },
    /// A checkpoint whose stored configuration disagrees with the expected one.
    ConfigMismatch { expected: String, found: String },
    /// Text input that failed to parse. `line` is 1-based.
    Parse { line: usize, message: String },
    /// Manifest rows sharing an id.
    DuplicateId { id: String },
    /// Filesystem failure, with the path that was being touched.
    Io { path: PathBuf, source: std::io::Error },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch {left:?} vs {right:?}")
            }
            Error::MaskLength { expected, got } => {
                write!(f, "mask length {got} does not match {expected} rows")
            }
            Error::InvalidParameter { name, message } => {
                write!(f, "invalid {name}: {message}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::NonFiniteGradient { section } => {
                write!(f, "non-finite gradient in section {section}")
            }
            Error::BinCapacity { bin, count, capacity } => {
                write!(
                    f,
                    "slice bin {bin} holds {count} points, exceeding capacity {capacity}"
                )
            }
            Error::DegenerateRange { x_min, x_max } => {
                write!(f, "degenerate x range [{x_min}, {x_max}]")
            }
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
            Error::ConfigMismatch { expected, found } => {
                write!(f, "config mismatch: expected {expected}, found {found}")
            }
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::DuplicateId { id } => write!(f, "duplicate id {id:?}"),
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
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

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }
}
