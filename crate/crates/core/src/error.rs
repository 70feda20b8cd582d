use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: domain error ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },
    #[error("all {candidates} candidates diverged for subject {subject}")]
    AllCandidatesDiverged { subject: u64, candidates: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("calibration failed: all {candidates} candidates diverged")]
    Calibration { candidates: usize },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for errors caused by numerical blow-up rather than misuse.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::AllCandidatesDiverged { .. }
                | Error::NonFiniteLoss { .. }
                | Error::Calibration { .. }
        )
    }
}
