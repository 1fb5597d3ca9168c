use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("plant is not exponentially stable: max eigenvalue real part {max_real_part:.6e}")]
    StabilityAssumption { max_real_part: f64 },

    #[error("numeric failure after {iterations} iterations: {message}")]
    Numeric { iterations: usize, message: String },

    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("state diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("point outside function domain: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("steady-state program is infeasible: {0}")]
    Infeasible(String),

    #[error("feasible subspace is trivial; the steady state is fully determined")]
    NoFreedom,

    #[error("plant generation failed: {0}")]
    Generation(String),

    #[error("invalid gain choice: {0}")]
    GainChoice(String),

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("synthesis LMI is infeasible: {0}")]
    SynthesisInfeasible(String),

    #[error("recovered gain fails the analysis certificate (margin {margin:.3e})")]
    CertificateMismatch { margin: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("scenario error: {0}")]
    Schema(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
