use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library reports. Each variant carries a stable
/// machine-readable code (see [`Error::code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("degenerate node(s) with no observations: {0:?}")]
    DegenerateNode(Vec<usize>),

    #[error("non-finite loss at step {step} (last finite loss {last_finite})")]
    NonFiniteLoss { step: usize, last_finite: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn shape(op: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op: op.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "E_SHAPE",
            Error::Config(_) => "E_CONFIG",
            Error::Contract(_) => "E_CONTRACT",
            Error::Io { .. } => "E_IO",
            Error::Format { .. } => "E_FORMAT",
            Error::EmptyDataset(_) => "E_EMPTY_DATASET",
            Error::DegenerateNode(_) => "E_DEGENERATE_NODE",
            Error::NonFiniteLoss { .. } => "E_NONFINITE_LOSS",
            Error::NonFinite(_) => "E_NONFINITE",
        }
    }
}
