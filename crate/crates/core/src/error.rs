use std::fmt;

use thiserror::Error;

/// Constraint family that blocked a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    /// Per-user SINR targets cannot be met jointly.
    SinrTargets,
    /// A per-beam transmit power cap.
    BeamPower,
    /// The illuminated-beam budget of a slot.
    Activity,
    /// A user's data demand before its deadline.
    Demand,
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Binding::SinrTargets => "sinr-targets",
            Binding::BeamPower => "beam-power",
            Binding::Activity => "activity",
            Binding::Demand => "demand",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("infeasible ({binding}): {detail}")]
    Infeasible { binding: Binding, detail: String },
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn infeasible(binding: Binding, detail: impl Into<String>) -> Self {
        Error::Infeasible { binding, detail: detail.into() }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
