use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A market spec, grid or prior violates one of its invariants.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    /// A posterior point estimate does not exist for the given data.
    #[error("degenerate estimate: {0}")]
    Degenerate(String),
    /// The explicit backward scheme produced a value beyond the configured bound.
    #[error("value blow-up at t = {t}, q = {q}, state {state}: |v| = {value:e} exceeds {bound:e}")]
    BlowUp {
        t: f64,
        q: f64,
        state: usize,
        value: f64,
        bound: f64,
    },
    /// A slice of an adaptive run failed.
    #[error("slice {index}: {inner}")]
    Slice { index: usize, inner: alloc::boxed::Box<Error> },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn domain(reason: impl Into<String>) -> Self {
        Error::Domain(reason.into())
    }
}
