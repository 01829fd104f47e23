use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("delay system is unstable at g={g}, q0={q0}, tau={tau}")]
    Unstable { g: f64, q0: f64, tau: f64 },

    #[error("stability verdict indeterminate at g={g}, q0={q0}, tau={tau}: contour passes through a characteristic root")]
    Indeterminate { g: f64, q0: f64, tau: f64 },

    #[error("closed form is numerically inconsistent: value {value}, imaginary residue {residue}")]
    NumericalInconsistency { value: f64, residue: f64 },

    #[error("quadrature did not reach tolerance: estimate {estimate}, error {error}, {evaluations} evaluations")]
    Accuracy {
        estimate: f64,
        error: f64,
        evaluations: usize,
    },

    #[error("invalid steady-state moments: {0}")]
    InvalidMoments(&'static str),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("degenerate covariance: |c| = {0} is not below 1")]
    DegenerateCovariance(f64),

    #[error("non-Markovian bound is singular: denominator {0}")]
    SingularBound(f64),

    #[error("outside the asymptotic validity domain (q0 > 1/2 and g < sqrt(1 - 1/(4 q0^2))): g={g}, q0={q0}")]
    Domain { g: f64, q0: f64 },

    #[error("trajectory diverged at step {step}: |q| = {value}")]
    Divergence { step: u64, value: f64 },

    #[error("ensemble failed: trajectories {failed:?} diverged")]
    Ensemble { failed: Vec<usize> },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("no frequency bins fall inside the band [{lo}, {hi}]")]
    DegenerateBand { lo: f64, hi: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("autocorrelation has no resolved 1/e crossing between lag 5 and lag {max_lag}")]
    FitWindow { max_lag: usize },

    #[error("fit is not identifiable: optimum {value} sits on the bracket boundary [{lo}, {hi}]")]
    NonIdentifiable { value: f64, lo: f64, hi: f64 },

    #[error("malformed trace file: {0}")]
    Parse(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
