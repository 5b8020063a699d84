use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid error-trajectory plan: {0}")]
    InvalidPlan(String),

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("ideal-weight fit failed: {0}")]
    Fit(String),

    #[error("gain-sign violation at t = {t}: g(x) = {value} is not positive")]
    GainSign { t: f64, value: f64 },

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("numeric blowup at step {step} (t = {t})")]
    NumericBlowup { step: usize, t: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("trace format error: {0}")]
    TraceFormat(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            got,
        })
    }
}
