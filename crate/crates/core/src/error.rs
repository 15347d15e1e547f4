use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DlsmError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("graph is empty: {0}")]
    EmptyGraph(String),

    #[error("density is undefined for graphs with fewer than 2 nodes (n = {0})")]
    UndefinedDensity(usize),

    #[error("negative sampling exhausted: requested {requested} non-edges, only {available} available")]
    SamplingExhausted { requested: usize, available: usize },

    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in {term} (layer {layer})")]
    NonFinite { term: String, layer: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown configuration key `{0}`")]
    UnknownConfigKey(String),

    #[error("training diverged at epoch {epoch}: loss non-finite for 3 consecutive epochs")]
    Diverged { epoch: usize },

    #[error("checkpoint format version {found} is incompatible (expected {expected})")]
    IncompatibleVersion { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch: file is truncated or corrupt")]
    Checksum,

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("node index {index} out of range for graph with {n} nodes")]
    OutOfRange { index: usize, n: usize },

    #[error("self-loop pair ({0}, {0}) cannot be scored")]
    SelfLoop(usize),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl DlsmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DlsmError::Io { path: path.into(), source }
    }

    /// Coarse category used by the command-line front end to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        use DlsmError::*;
        match self {
            Io { .. } | Parse { .. } | EmptyGraph(_) | UndefinedDensity(_) | SamplingExhausted { .. }
            | OutOfRange { .. } | SelfLoop(_) | IncompatibleVersion { .. } | Checksum
            | Checkpoint(_) | Json(_) | Csv(_) => ErrorKind::Data,
            InvalidRatios(_) | Config(_) | UnknownConfigKey(_) => ErrorKind::Usage,
            Shape { .. } | Domain(_) | NonFinite { .. } | Invariant(_) | UndefinedMetric(_)
            | Diverged { .. } => ErrorKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

pub type Result<T> = std::result::Result<T, DlsmError>;
