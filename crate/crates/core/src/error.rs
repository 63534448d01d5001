use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Grid construction rejected (bad bounds, too few points, too many dims).
    InvalidGrid(String),
    IndexOutOfRange {
        dim: usize,
        index: usize,
        points: usize,
    },
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    /// A query point or evaluator input contained NaN.
    NonFiniteInput,
    /// The vector field produced NaN or infinity.
    NonFiniteDerivative,
    /// The endpoint cost was not finite at a grid node.
    NonFiniteTerminal {
        node: usize,
    },
    /// A Bellman candidate was not finite.
    NonFiniteCandidate {
        node: usize,
        control: usize,
    },
    /// A cost lower bound or sample violated the positivity assumption.
    Assumption(String),
    InvalidConfig(String),
    UnknownSystem(String),
    /// Operation requires the state to lie inside the grid domain.
    OutOfDomain,
    BudgetExceeded {
        required: u128,
        budget: u64,
    },
    DigestMismatch {
        field: String,
        oracle: String,
    },
    /// A solver step failed; carries the 1-based step index.
    Step {
        step: usize,
        source: Box<Error>,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidGrid(msg) => write!(f, "invalid grid: {msg}"),
            Error::IndexOutOfRange { dim, index, points } => write!(
                f,
                "index {index} out of range for dimension {dim} with {points} points"
            ),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::NonFiniteInput => f.write_str("non-finite input coordinate"),
            Error::NonFiniteDerivative => f.write_str("vector field returned a non-finite value"),
            Error::NonFiniteTerminal { node } => {
                write!(f, "endpoint cost is not finite at node {node}")
            }
            Error::NonFiniteCandidate { node, control } => write!(
                f,
                "non-finite Bellman candidate at node {node} for control {control}"
            ),
            Error::Assumption(msg) => write!(f, "cost assumption violated: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::UnknownSystem(name) => write!(f, "unknown built-in system `{name}`"),
            Error::OutOfDomain => f.write_str("state lies outside the grid domain"),
            Error::BudgetExceeded { required, budget } => write!(
                f,
                "enumeration needs {required} sequences, budget is {budget}"
            ),
            Error::DigestMismatch { field, oracle } => write!(
                f,
                "problem digest mismatch: field `{field}`, oracle `{oracle}`"
            ),
            Error::Step { step, source } => write!(f, "solver step {step}: {source}"),
        }
    }
}

impl core::error::Error for Error {}
