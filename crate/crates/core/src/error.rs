use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the clustering engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate vector: row {row} has zero norm")]
    DegenerateVector { row: usize },

    #[error("degenerate cluster: cluster column {cluster} has zero norm")]
    DegenerateCluster { cluster: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value produced by {primitive}")]
    NonFinite { primitive: &'static str },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("inconsistent oracle: answer {link} on ({i}, {j}) conflicts with chain {chain:?}")]
    InconsistentOracle {
        i: usize,
        j: usize,
        link: String,
        chain: Vec<usize>,
    },

    #[error("pair ({0}, {1}) is already constrained")]
    AlreadyConstrained(usize, usize),

    #[error("sample {0} cannot be paired with itself")]
    SelfPair(usize),

    #[error("sample id {id} out of range for store of size {len}")]
    UnknownSample { id: usize, len: usize },

    #[error("unweighted sample: row {0} has zero total weight")]
    UnweightedSample(usize),

    #[error("no constraints for Q: the hard-negative score needs at least one recorded answer")]
    NoConstraints,

    #[error("insufficient candidates: need at least {needed}, have {have}")]
    InsufficientCandidates { needed: usize, have: usize },

    #[error("missing label for sample {sample} under orientation {orientation:?}")]
    MissingLabel { sample: usize, orientation: String },

    #[error(
        "divergent query sequence at answer {index}: logged ({logged_i}, {logged_j}), asked ({asked_i}, {asked_j})"
    )]
    DivergentReplay {
        index: usize,
        logged_i: usize,
        logged_j: usize,
        asked_i: usize,
        asked_j: usize,
    },

    #[error("replay log exhausted after {0} answers")]
    ReplayExhausted(usize),

    #[error("ticket {0} is unknown")]
    UnknownTicket(String),

    #[error("ticket {0} was already resolved")]
    TicketConflict(String),

    #[error("ticket {0} was cancelled")]
    TicketCancelled(String),

    #[error("optimization did not converge: {0}")]
    NonConvergence(String),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("io: {0}")]
    Io(String),

    #[error("json: {0}")]
    Json(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
