//! Error taxonomy shared by every engine in the crate.
//!
//! Errors split into two families, mirrored by the CLI exit codes:
//! configuration/validation problems (`exit_code() == 2`) and
//! numerical/feasibility problems detected while solving
//! (`exit_code() == 3`). Every message names the violated invariant so a
//! failing run can be diagnosed from stderr alone.

use crate::payoff::Shape;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Payoffs are functions of a nonnegative price; evaluation below zero
    /// is a caller bug, not a market state.
    #[error("payoff evaluated at negative price {price}; prices must be ≥ 0")]
    NegativePrice { price: f64 },

    /// A numeric precondition on an operation's inputs failed
    /// (non-straddling support, ν ≤ 0, bad probe range, …).
    #[error("domain error: {0}")]
    Domain(String),

    /// The support has no strictly negative or no strictly positive return,
    /// so no measure can have zero mean with positive mass.
    #[error(
        "no risk-neutral measure: support must contain at least one strictly \
         negative and one strictly positive return"
    )]
    NoRiskNeutralMeasure,

    /// An engine that is only valid for a particular payoff shape was handed
    /// something else.
    #[error("payoff shape is {found:?} but this operation requires {required}")]
    ShapeMismatch { required: &'static str, found: Shape },

    /// Instance exceeds a hard size cap (non-recombining trees, exact-engine
    /// state counts, oracle limits).
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    /// The jump compensation is too large for the uncertainty interval, so
    /// the two-point weights cannot both stay strictly positive.
    #[error("jump model infeasible: {0}")]
    JumpInfeasible(String),

    /// Discretization step does not fit inside the uncertainty interval.
    #[error(
        "degenerate discretization: step {epsilon} must be positive and \
         smaller than the interval width {width}"
    )]
    DegenerateStep { epsilon: f64, width: f64 },

    /// Explicit finite-difference scheme would be unstable (CFL violation).
    #[error("unstable configuration: {0}")]
    Unstable(String),

    /// A run configuration failed validation before any engine ran.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Self-check found a disagreement between an engine and its oracle.
    #[error("self-check failed: {0}")]
    CheckFailed(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to: `2` for configuration
    /// and validation errors, `3` for numerical/feasibility errors raised
    /// while solving.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Domain(_)
            | Error::NegativePrice { .. } => 2,
            Error::NoRiskNeutralMeasure
            | Error::ShapeMismatch { .. }
            | Error::SizeLimit(_)
            | Error::JumpInfeasible(_)
            | Error::DegenerateStep { .. }
            | Error::Unstable(_)
            | Error::CheckFailed(_) => 3,
        }
    }
}
