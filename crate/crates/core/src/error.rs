use thiserror::Error;

use crate::quantum::QubitId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not unitary (max deviation {0:.3e})")]
    NotUnitary(f64),
    #[error("channel is not trace preserving (max deviation {0:.3e})")]
    NotTracePreserving(f64),
    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("qubit {0} is not part of the state")]
    UnknownQubit(QubitId),
    #[error("qubit {0} listed more than once")]
    DuplicateQubit(QubitId),
    #[error("qubit {0} is already part of the state")]
    QubitAlreadyPresent(QubitId),
    #[error("empty qubit selection")]
    EmptySelection,
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("probability {name} = {value} outside [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("protocol order violation on {module}: {detail}")]
    ProtocolOrder { module: String, detail: String },
    #[error("entanglement campaign gave up after {attempts} attempts ({elapsed_us} us)")]
    CampaignFailed { attempts: u64, elapsed_us: f64 },
    #[error("classical link: {0}")]
    Link(String),
    #[error("incomplete tomography records: {0}")]
    IncompleteRecords(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
