use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An action index outside the environment's action set.
    InvalidAction { action: usize, num_actions: usize },
    /// A state that is not part of the enumerated state space.
    UnknownState(String),
    /// The configured state space exceeds the enumeration cap.
    StateSpaceTooLarge { size: usize, cap: usize },
    /// Invalid configuration or hyperparameter.
    Config(String),
    /// A non-finite value appeared during training.
    NonFinite(String),
    /// An iterative method hit its iteration cap.
    NoConvergence { iterations: usize, residual: f64 },
    /// An operation received an empty input where data is required.
    Empty(&'static str),
    /// Feature vector length disagrees with the model schema.
    SchemaMismatch { expected: usize, found: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidAction { action, num_actions } => {
                write!(f, "invalid action {action} (action set has {num_actions} actions)")
            }
            Error::UnknownState(s) => write!(f, "state not in enumerated space: {s}"),
            Error::StateSpaceTooLarge { size, cap } => {
                write!(f, "state space of {size} states exceeds enumeration cap {cap}")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::NoConvergence { iterations, residual } => {
                write!(f, "no convergence after {iterations} iterations (residual {residual:e})")
            }
            Error::Empty(what) => write!(f, "empty input: {what}"),
            Error::SchemaMismatch { expected, found } => {
                write!(f, "feature schema mismatch: expected {expected} features, found {found}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
