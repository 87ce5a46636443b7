use alloc::string::String;

/// Errors raised by the model, the detectors and the Monte Carlo harness.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid parameters or mismatched dimensions.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A code matrix without full column rank.
    #[error("degenerate code: {0}")]
    DegenerateCode(String),
    /// Data that cannot support the statistic (e.g. rank-deficient `RR^H`).
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    /// A factorization broke down (non-PD input, negative eigenvalue).
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! param_err {
    ($($arg:tt)*) => {
        $crate::Error::Parameter(alloc::format!($($arg)*))
    };
}
pub(crate) use param_err;
