use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    /// A record violated a domain invariant; `record` names the offender.
    #[error("invalid record `{record}`: {reason}")]
    Validation { record: String, reason: String },

    /// Configuration rejected before any experiment work starts.
    #[error("invalid `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("conflicting trace rows for ({model_id}, {sample_id})")]
    TraceConflict { model_id: String, sample_id: String },

    #[error("no trace entry for ({model_id}, {sample_id})")]
    TraceMiss { model_id: String, sample_id: String },

    #[error("remote evaluator error for model `{model_id}`: {reason}")]
    Remote { model_id: String, reason: String },

    /// A pull failed mid-experiment; earlier pulls are discarded.
    #[error("experiment aborted after {completed_pulls} pulls: {source}")]
    Aborted { completed_pulls: u64, source: Box<Error> },

    #[error("reports come from different pools")]
    MixedPools,

    #[error("no LLM response could be used: {0}")]
    Llm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    pub(crate) fn validation(record: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            record: record.into(),
            reason: reason.into(),
        }
    }
}
