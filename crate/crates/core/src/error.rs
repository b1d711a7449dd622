use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("invalid cutoff set: {0}")]
    InvalidCutoffs(String),

    #[error("cutoff {0} leaves an empty subset; the effect is undefined for cutoffs >= 1")]
    EmptySubset(f64),

    #[error("invalid trial data: {0}")]
    InvalidTrial(String),

    #[error("arm {0} is empty")]
    EmptyArm(&'static str),

    #[error("selection references cutoff {0}, which is not among the summarized cutoffs")]
    InconsistentSelection(f64),

    #[error("subset at cutoff {0} has an empty arm; posterior probability is undefined")]
    UndefinedSummary(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("logistic fit did not converge; use a non-informative prior instead")]
    NonConvergedFit,

    #[error("no simulation records to aggregate")]
    EmptyRecords,

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
