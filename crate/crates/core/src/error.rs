use thiserror::Error;

use crate::spdz::TripleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter generation failed: {0}")]
    ParamGen(String),

    #[error("invalid group parameters: {0}")]
    InvalidGroup(String),

    #[error("element is not invertible modulo p")]
    NonInvertible,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("plaintext is not a member of the order-q subgroup")]
    MessageSpace,

    #[error("signed value does not fit in the field: {0}")]
    Overflow(String),

    #[error("protocol state error: {0}")]
    ProtocolState(String),

    #[error("malformed message: {0}")]
    Malformed(String),

    #[error("chain plan error: {0}")]
    Plan(String),

    #[error("mHKM chain aborted in session {index}: {source}")]
    ChainAborted {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot split into {0} shares (need at least 2)")]
    Split(usize),

    #[error("incomplete share vector: {0}")]
    Incomplete(String),

    #[error("committee selection over an empty candidate set")]
    EmptyCommittee,

    #[error("blind factor must be invertible")]
    BlindFactor,

    #[error("share algebra error: {0}")]
    Algebra(String),

    #[error("triple {0} was already consumed")]
    TripleReuse(TripleId),

    #[error("fixed-point parameter error: {0}")]
    Parameter(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate contingency table: zero denominator")]
    DegenerateTable,

    #[error("routing error: {0}")]
    Routing(String),

    #[error("runtime setup error: {0}")]
    Setup(String),

    #[error("transcript query error: {0}")]
    Query(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures that originate inside a running protocol, as opposed
    /// to bad inputs or configuration.
    pub fn is_protocol_abort(&self) -> bool {
        matches!(
            self,
            Error::ProtocolState(_)
                | Error::Malformed(_)
                | Error::ChainAborted { .. }
                | Error::TripleReuse(_)
                | Error::Incomplete(_)
                | Error::Routing(_)
                | Error::Overflow(_)
                | Error::BlindFactor
        )
    }
}
