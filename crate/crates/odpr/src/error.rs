use thiserror::Error;

/// Errors surfaced by dataset handling, fitting, and the experiment harness.
#[derive(Debug, Error)]
pub enum OdprError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed binary or CSV input. `record` is the zero-based record
    /// index when the failure is tied to one.
    #[error("format error{}: {msg}", record.map(|r| format!(" at record {r}")).unwrap_or_default())]
    Format { msg: String, record: Option<usize> },

    /// A structural invariant failed (dimension mismatch, bad trajectory
    /// bounds, weight vector off the simplex, ...).
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// A weight file does not belong to the dataset it was loaded against.
    #[error("dataset pairing mismatch: {0}")]
    Pairing(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("training diverged at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    /// Exact policy evaluation hit a singular linear system (improper
    /// policy under an undiscounted MDP).
    #[error("singular system: {0}")]
    Singular(String),

    #[error("{0}")]
    InvalidArgument(String),
}

impl OdprError {
    pub fn format(msg: impl Into<String>) -> Self {
        OdprError::Format { msg: msg.into(), record: None }
    }

    pub fn format_at(record: usize, msg: impl Into<String>) -> Self {
        OdprError::Format { msg: msg.into(), record: Some(record) }
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        OdprError::Invariant(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        OdprError::InvalidArgument(msg.into())
    }
}
