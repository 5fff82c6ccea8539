use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report. Variants are kept fine-grained so the
/// command-line driver can map each one onto its own exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "unknown train_type `{0}` (expected static, dynamic_select, dynamic_mix or dynamic_weight)"
    )]
    UnknownTrainType(String),

    #[error("mixture proportions must lie on the simplex: {0}")]
    BadSimplex(String),

    #[error("bad schedule: update_step must be >= 1 when update_times > 0 (got update_step={update_step}, update_times={update_times})")]
    BadSchedule {
        update_step: usize,
        update_times: usize,
    },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("sample {id} has {len} token(s); at least 2 are needed for a next-token target")]
    TooShort { id: u64, len: usize },

    #[error("sample {id} contains token {token} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange {
        id: u64,
        token: u32,
        vocab_size: usize,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("Adam preconditioning requested but optimizer is not Adam")]
    NotAdam,

    #[error("Adam preconditioning requested before the optimizer has taken a step")]
    ColdOptimizer,

    #[error("validation set is empty")]
    EmptyValidation,

    #[error("metric evaluated to a non-finite value ({0})")]
    NonFiniteMetric(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("negative loss {value} at index {index}")]
    NegativeLoss { index: usize, value: f64 },

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("cannot select {k} items from a pool of {pool}")]
    KTooLarge { k: usize, pool: usize },

    #[error("domain {domain} has positive mixture weight but no samples")]
    EmptyDomainWithMass { domain: usize },

    #[error("bad proportions: {0}")]
    BadProportions(String),

    #[error("bad validation mode: {0}")]
    BadMode(String),

    #[error("{kind} `{name}` is already registered")]
    DuplicateName { kind: String, name: String },

    #[error("unknown {kind} `{name}`")]
    UnknownComponent { kind: String, name: String },

    #[error("component `{0}` mutated model state outside of a training step")]
    ComponentMutatedModel(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown key `{key}` at line {line}")]
    UnknownKey { key: String, line: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
