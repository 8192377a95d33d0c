use crate::dataset::Label;
use crate::svm::SvmModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {0} absent")]
    MissingClass(Label),

    #[error(
        "SMO did not converge after {iterations} updates (max KKT violation {max_violation:.3e})"
    )]
    NotConverged {
        /// Model assembled from the best iterate reached.
        model: Box<SvmModel>,
        max_violation: f64,
        iterations: usize,
    },

    #[error("every cross-validation fold was degenerate")]
    AllFoldsDegenerate,

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
