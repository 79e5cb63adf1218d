use alloc::string::String;
use core::fmt;

/// Errors surfaced by the solvers, simulators, and optimizers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A model parameter or option violates its stated constraint.
    InvalidParameter {
        name: &'static str,
        message: String,
    },
    /// Evaluation time outside `[0, T]`.
    TimeOutOfRange { t: f64, horizon: f64 },
    /// A sampled object does not line up with the grid it is used on.
    GridMismatch { expected: usize, found: usize },
    /// Integration or simulation produced a non-finite value.
    NonFinite {
        context: &'static str,
        step: usize,
        path: Option<u64>,
    },
    /// An operation restricted to the simplified setting (`f_d ≡ 0`,
    /// `v̄ ≡ 0`, `v̄_T = 0`) received coefficients with nonzero γ or θ.
    NotSimplified {
        max_abs_gamma: f64,
        max_abs_theta: f64,
    },
    /// The log-barrier penalty needs a strictly positive pattern.
    NonPositivePattern { t: f64, value: f64 },
    /// Results handed to a comparison do not share a configuration.
    MismatchedResults(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter { name, message } => {
                write!(f, "invalid parameter `{name}`: {message}")
            }
            Error::TimeOutOfRange { t, horizon } => {
                write!(f, "time {t} outside [0, {horizon}]")
            }
            Error::GridMismatch { expected, found } => {
                write!(f, "grid mismatch: expected {expected} samples, found {found}")
            }
            Error::NonFinite {
                context,
                step,
                path,
            } => match path {
                Some(p) => write!(f, "{context}: non-finite value at step {step} on path {p}"),
                None => write!(f, "{context}: non-finite value at step {step}"),
            },
            Error::NotSimplified {
                max_abs_gamma,
                max_abs_theta,
            } => write!(
                f,
                "coefficients not from the simplified setting: max|gamma| = {max_abs_gamma:e}, max|theta| = {max_abs_theta:e}"
            ),
            Error::NonPositivePattern { t, value } => {
                write!(f, "pattern must be strictly positive: value {value} at t = {t}")
            }
            Error::MismatchedResults(msg) => write!(f, "mismatched results: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
