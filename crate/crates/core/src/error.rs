use thiserror::Error;

use crate::solvers::FitDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty treated group")]
    EmptyTreatedGroup,

    #[error("total weight over the treated group is zero")]
    ZeroTotalWeight,

    #[error("outcome must be binary for the logistic family (found {0})")]
    NonBinaryOutcome(f64),

    #[error("{solver} did not converge after {} iterations (kkt violation {:.3e})", .diagnostics.iterations_used, .diagnostics.kkt_max_violation)]
    NotConverged {
        solver: &'static str,
        diagnostics: FitDiagnostics,
    },

    #[error("linear program is infeasible")]
    LpInfeasible,

    #[error("linear program is unbounded")]
    LpUnbounded,

    #[error("linear program failed: {0}")]
    LpNumerical(String),

    #[error("cross-validation fold {fold} has no treated units in its training or held-out part")]
    DegenerateFold { fold: usize },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_stage(self, stage: impl Into<String>) -> Error {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage labels stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Stage labels from outermost to innermost.
    pub fn stages(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut cur = self;
        while let Error::Stage { stage, source } = cur {
            out.push(stage.as_str());
            cur = source;
        }
        out
    }
}
