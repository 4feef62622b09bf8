use thiserror::Error;

use crate::normal::FragmentLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    #[error("value {value} for `{name}` is outside [0, 1]")]
    Domain { name: String, value: f64 },

    #[error("expected a propositional formula, found {0}")]
    NotPropositional(String),

    #[error("variable sets differ: {left:?} vs {right:?}")]
    VariableMismatch {
        left: Vec<String>,
        right: Vec<String>,
    },

    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{0}")]
    Kb(String),

    #[error("formula is not in negation normal form")]
    NotNormalized,

    #[error("empty clause set")]
    EmptyClauses,

    #[error("formula is not in a convex fragment: {0}")]
    NotInFragment(String),

    #[error("formula is labelled {found:?}, requested {requested:?}")]
    LabelMismatch {
        requested: FragmentLabel,
        found: FragmentLabel,
    },

    #[error("integer coefficient overflow while compiling")]
    CoefficientOverflow,

    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),

    #[error("grounding: {0}")]
    Grounding(String),

    #[error("grounding would produce {leaves} leaves (limit {limit}); pass the override flag to proceed")]
    GroundingTooLarge { leaves: u128, limit: u128 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("quadratic term is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("invalid constraint structure: {0}")]
    Structure(String),

    #[error("kernel: {0}")]
    Kernel(String),

    #[error("negative rule weight {weight} for `{rule}`")]
    NegativeWeight { rule: String, weight: f64 },

    #[error("solver did not converge: {0}")]
    Solver(String),

    #[error("line {line}: {message}")]
    Values { line: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
