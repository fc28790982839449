use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes of the numeric layer.
///
/// Every variant carries enough context to state *where* the computation
/// broke, so callers can report without re-deriving state.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A constructor or routine was handed an argument outside its domain.
    InvalidParameter(String),
    /// An operation needed the minimal risk value `R*` but the spec bundle
    /// does not carry one.
    MissingRStar,
    /// A trajectory left the guard region `|X| <= 1e12` during integration.
    Divergence { t: f64, value: f64 },
    /// Adaptive quadrature hit the recursion depth cap before reaching the
    /// requested tolerance.
    QuadratureDepthExceeded { a: f64, b: f64, tol: f64 },
    /// The terminal-risk noise gain `delta` must be positive for the optimal
    /// control to exist; it was not at time `t`.
    NonpositiveDelta { t: f64, value: f64 },
    /// The gradient noise variance must be positive; `at` is the evaluation
    /// point (a time along the flow, or a probe location during validation).
    NonpositiveSigma { at: f64, value: f64 },
    /// The variance component of the moment system fell below the round-off
    /// clamp `-1e-12`, signalling an integration fault rather than noise.
    NegativeVariance { t: f64, value: f64 },
    /// A sample budget below the horizon can never be met since `1/alpha >= 1`.
    InfeasibleBudget { target: f64, horizon: f64 },
    /// Bracket expansion for the multiplier search failed to enclose the
    /// target budget.
    BracketFailure { target: f64 },
    /// A batch schedule does not consume exactly the samples available.
    BudgetMismatch { scheduled: u64, available: u64 },
    /// Two grid-aligned inputs were built on different grids.
    GridMismatch { expected: usize, got: usize },
    /// A derivative callable disagrees with a finite-difference probe of the
    /// level below it.
    InconsistentDerivative {
        order: u8,
        theta: f64,
        analytic: f64,
        numeric: f64,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
            Error::MissingRStar => write!(f, "risk spec has no minimal risk value R*"),
            Error::Divergence { t, value } => {
                write!(f, "trajectory diverged at t = {t}: |X| = {value:e} > 1e12")
            }
            Error::QuadratureDepthExceeded { a, b, tol } => write!(
                f,
                "adaptive quadrature on [{a}, {b}] failed to reach tol = {tol:e} within depth 60"
            ),
            Error::NonpositiveDelta { t, value } => {
                write!(f, "noise gain delta(t = {t}) = {value:e} is not positive")
            }
            Error::NonpositiveSigma { at, value } => {
                write!(f, "noise variance Sigma at {at} is {value:e}, not positive")
            }
            Error::NegativeVariance { t, value } => {
                write!(f, "moment variance at t = {t} fell to {value:e}, beyond round-off")
            }
            Error::InfeasibleBudget { target, horizon } => write!(
                f,
                "budget {target} is below the horizon {horizon}; 1/alpha >= 1 forces C >= T"
            ),
            Error::BracketFailure { target } => {
                write!(f, "could not bracket a multiplier delivering budget {target}")
            }
            Error::BudgetMismatch { scheduled, available } => write!(
                f,
                "schedule consumes {scheduled} samples but the dataset holds {available}"
            ),
            Error::GridMismatch { expected, got } => {
                write!(f, "grid mismatch: expected {expected} steps, got {got}")
            }
            Error::InconsistentDerivative { order, theta, analytic, numeric } => write!(
                f,
                "derivative of order {order} at theta = {theta} disagrees with finite \
                 differences: analytic {analytic:e} vs numeric {numeric:e}"
            ),
        }
    }
}

impl core::error::Error for Error {}
