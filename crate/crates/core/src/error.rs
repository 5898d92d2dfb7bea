use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("origin is not an interior point of the domain")]
    OriginNotInterior,

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("polytope projection did not converge after {iterations} iterations (last change {change:e})")]
    ProjectionNotConverged { iterations: usize, change: f64 },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("time {time} is not a node of the path grid")]
    OffGrid { time: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("stability guard violated: {0}")]
    Stability(String),

    #[error("non-finite value at step {step}, node {node}")]
    NonFinite { step: usize, node: usize },

    #[error("penalty resolve back-substitution defect {defect:e} at step {step}, node {node}")]
    ResolveDefect { step: usize, node: usize, defect: f64 },

    #[error("assumptions rejected: {0}")]
    Assumptions(String),

    #[error("test process leaves the closed domain at path node {0}")]
    InadmissibleTestProcess(usize),

    #[error("test function support touches the torus edge")]
    SupportTouchesEdge,

    #[error("star-integral calibration failed: {0}")]
    Calibration(String),
}

impl Error {
    /// True for failures of the numerical scheme itself, as opposed to bad
    /// input or rejected assumptions.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ProjectionNotConverged { .. }
                | Error::NonFinite { .. }
                | Error::ResolveDefect { .. }
                | Error::Stability(_)
                | Error::Calibration(_)
        )
    }

    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
