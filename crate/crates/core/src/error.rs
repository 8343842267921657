use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed specification text. `offset` is a byte offset into the input.
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    /// Well-formed text that falls outside the supported LTL fragment.
    #[error("{0}")]
    Fragment(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("composite weights sum to {sum}, need at least 1 with two or more bounded fields")]
    Weight { sum: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numerical failure: {message} (condition estimate {condition:.3e})")]
    Numerical { message: String, condition: f64 },

    #[error("problem too large for enumeration: {0}")]
    Size(String),

    #[error("QP infeasible at t = {time:.4} s during {objective}: {detail}")]
    Infeasible {
        time: f64,
        objective: String,
        detail: String,
    },

    #[error(
        "objective {objective} exceeded {max_time} s (entered at t = {entered:.4} s, finite-time bound {bound:?})"
    )]
    Timeout {
        objective: String,
        entered: f64,
        max_time: f64,
        bound: Option<f64>,
    },

    #[error("trace shape: {0}")]
    Shape(String),

    #[error("invalid lasso template: {0}")]
    Template(String),
}

impl Error {
    pub(crate) fn syntax(offset: usize, message: impl Into<String>) -> Self {
        Error::Syntax {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn dimension(expected: usize, got: usize) -> Self {
        Error::Dimension { expected, got }
    }
}
