//! Error type shared by every module in the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong short of a panic.
///
/// Variants are grouped by the kind of failure rather than by module, so
/// callers (notably the CLI) can map them onto exit codes without matching on
/// message strings:
///
/// * invalid inputs — [`Error::Domain`], [`Error::Config`],
///   [`Error::ShapeMismatch`], [`Error::InsufficientData`];
/// * principled refusals to produce a number — [`Error::TruncationUncertified`],
///   [`Error::RejectionInfeasible`], [`Error::ModelInconsistency`],
///   [`Error::DegenerateStatistic`];
/// * numerical breakdown — [`Error::NotPositiveDefinite`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A scalar argument is outside the mathematical domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model, grid, or run specification is invalid or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Two containers that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Not enough rows/samples to carry out the requested fit or test.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The certified bound on the truncation error of an infinite-horizon
    /// functional exceeds the requested tolerance at the given horizon.
    #[error(
        "truncation not certified: bound {bound:.3e} exceeds tolerance {tolerance:.3e} at {points} grid points{advice}"
    )]
    TruncationUncertified {
        bound: f64,
        tolerance: f64,
        points: usize,
        /// Human-readable advice, e.g. a horizon that would certify.
        advice: String,
    },

    /// A rejection sampler would be left with too few accepted replicas.
    #[error(
        "rejection sampling infeasible: predicted {predicted:.1} acceptances from {raw} raw replicas, need at least {required}{advice}"
    )]
    RejectionInfeasible {
        predicted: f64,
        raw: u64,
        required: u64,
        advice: String,
    },

    /// A correlation model's small-gap behaviour disagrees with its declared
    /// roughness or scale.
    #[error(
        "correlation model inconsistent near zero: declared (alpha={declared_alpha}, c={declared_c}), fitted (alpha={fitted_alpha:.6}, c={fitted_c:.6})"
    )]
    ModelInconsistency {
        declared_alpha: f64,
        declared_c: f64,
        fitted_alpha: f64,
        fitted_c: f64,
    },

    /// A ratio or normalized statistic has an identically degenerate
    /// denominator, so the quantity is undefined.
    #[error("degenerate statistic: {0}")]
    DegenerateStatistic(String),

    /// A covariance matrix could not be factorized even after fallbacks.
    #[error("covariance not positive definite: {0}")]
    NotPositiveDefinite(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
