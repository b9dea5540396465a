use thiserror::Error;

use crate::equilibrium::ConditionsReport;
use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("risk aversion must be positive, got {0}")]
    NonPositiveDelta(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite or exploding state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("auxiliary holding {value} at interval {index} outside [{lo}, {hi}]")]
    BoundsViolation { index: usize, value: f64, lo: f64, hi: f64 },

    #[error("fixed-point iteration for the optimal holding failed after {iterations} iterations")]
    FixedPointDivergence { iterations: usize },

    #[error("operation requires constant volatility")]
    NonConstantVolatility,

    #[error("equilibrium conditions failed: {}", .0.failed().join(", "))]
    ConditionsFailed(Box<ConditionsReport>),

    #[error("search space of {required} controls exceeds the enumeration budget {budget} and no random-search budget was given")]
    BudgetExceeded { required: f64, budget: usize },

    #[error("bad parameters: {0}")]
    BadParams(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("{} ({})", v.field, v.reason))
        .collect::<Vec<_>>()
        .join("; ")
}
