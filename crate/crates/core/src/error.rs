use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("pcap {path}: {msg}")]
    Pcap { path: PathBuf, msg: String },

    #[error("flows presented out of order: end_time {got} is before {latest} minus tolerance")]
    OutOfOrder { got: u64, latest: u64 },

    #[error("flow has no packets")]
    EmptyFlow,

    #[error(transparent)]
    Codec(#[from] crate::graph::codec::CodecError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("schema mismatch: expected {expected}, found {found}")]
    Schema { expected: String, found: String },

    #[error("training aborted: non-finite loss at epoch {epoch} batch {batch} (lr {lr}, grad norm {grad_norm})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        lr: f64,
        grad_norm: f64,
    },

    #[error("corpus must contain at least two classes, found {0}")]
    TooFewClasses(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient at input coordinate {coordinate}")]
    NonFiniteGradient { coordinate: usize },

    #[error("class {0} has no flows")]
    EmptyClass(String),

    #[error(transparent)]
    Llm(#[from] crate::explain::llm::LlmError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure stems from bad input data rather than a bug.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_data_error(),
            Error::Io { .. }
            | Error::Pcap { .. }
            | Error::OutOfOrder { .. }
            | Error::EmptyFlow
            | Error::Codec(_)
            | Error::Schema { .. }
            | Error::TooFewClasses(_)
            | Error::EmptyClass(_)
            | Error::Json(_)
            | Error::Config(_)
            | Error::InvalidArgument(_) => true,
            _ => false,
        }
    }
}
