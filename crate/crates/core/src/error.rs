use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CnvError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CnvError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty matrix file {0}")]
    EmptyFile(PathBuf),

    #[error("malformed row at line {line}: expected {expected} cells, found {found}")]
    MalformedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-numeric cell at line {line}, column {column}: {value:?}")]
    NonNumericCell {
        line: usize,
        column: usize,
        value: String,
    },

    #[error("matrix needs at least {min_samples} samples and 1 probe, got {samples}x{probes}")]
    TooSmall {
        samples: usize,
        probes: usize,
        min_samples: usize,
    },

    #[error("bin size must be at least 1")]
    ZeroBinSize,

    #[error("bin [{start}, {end}) is out of bounds for {n_probes} probes")]
    OutOfBounds {
        start: usize,
        end: usize,
        n_probes: usize,
    },

    #[error("case matrix has {case} probes but control matrix has {control}")]
    ProbeCountMismatch { case: usize, control: usize },

    #[error("parameter slice [{start}, {end}) does not fit a model of length {len}")]
    SliceMismatch { start: usize, end: usize, len: usize },

    #[error("bin list and model slices disagree: {0}")]
    BinMismatch(String),

    #[error("cannot place regions: {0}")]
    LayoutOverflow(String),

    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },
}

impl CnvError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CnvError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CnvError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
