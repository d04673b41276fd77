use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    Domain(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A Poisson linear predictor beyond the exp() overflow guard.
    #[error("linear predictor {eta} exceeds the overflow threshold")]
    DivergedInput { eta: f64 },

    #[error("matrix is not positive definite (failing pivot {index})")]
    NotPositiveDefinite { index: usize },

    #[error("iteration did not converge after {iterations} steps (last estimate {last})")]
    NoConvergence { iterations: usize, last: f64 },

    #[error("Fisher information is singular (failing pivot {pivot})")]
    SingularFisher { pivot: usize },

    #[error("fit diverged at iteration {iteration}")]
    Divergence { iteration: usize, estimate: Vec<f64> },

    #[error("degenerate knots: {0}")]
    DegenerateKnots(String),

    #[error("protocol error at byte {offset}: {reason}")]
    Protocol { offset: usize, reason: String },

    #[error("transport error{}: {message}", WorkerTag(*.worker))]
    Transport { worker: Option<u32>, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs or the
    /// exchange (singular Fisher, divergence, overflow, non-convergence).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DivergedInput { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::NoConvergence { .. }
                | Error::SingularFisher { .. }
                | Error::Divergence { .. }
        )
    }

    pub fn is_transport(&self) -> bool {
        matches!(self, Error::Transport { .. } | Error::Protocol { .. })
    }
}

struct WorkerTag(Option<u32>);

impl fmt::Display for WorkerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(w) => write!(f, " (worker {w})"),
            None => Ok(()),
        }
    }
}
