use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Input outside the mathematical domain of a function (NaN, infinity, p ∉ (0,1), ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A model or configuration parameter violates its documented range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The requested evaluation lies in a region where f64 tails underflow.
    #[error("unsupported region: {0}")]
    UnsupportedRegion(String),

    /// A simulated survival time hit the hard step cap.
    #[error("survival time did not terminate within {cap} steps")]
    NonTermination { cap: u64 },

    /// The quantity is undefined at this point (e.g. the multiplier at eta = 0).
    #[error("singularity: {0}")]
    Singularity(String),

    /// An iterative or adaptive method did not reach its tolerance.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// The truncated x-domain loses more kernel mass than allowed.
    #[error("domain truncation: {0}")]
    Truncation(String),

    /// The requested correlation level cannot be reached.
    #[error("infeasible: {0}")]
    Infeasible(String),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Parameter(_) => "parameter",
            Error::UnsupportedRegion(_) => "unsupported-region",
            Error::NonTermination { .. } => "non-termination",
            Error::Singularity(_) => "singularity",
            Error::Convergence(_) => "convergence",
            Error::Truncation(_) => "truncation",
            Error::Infeasible(_) => "infeasible",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite, got {x}")))
    }
}
