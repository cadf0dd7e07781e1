use thiserror::Error;

/// Errors raised anywhere in the bounding pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid case: {0}")]
    Validation(String),

    #[error("branch {from}-{to} has zero impedance")]
    DegenerateBranch { from: usize, to: usize },

    #[error("local solver did not converge after {iterations} iterations (kkt residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("local solver could not find an interior starting point: {0}")]
    InfeasibleStart(String),

    #[error("multiplier convention mismatch: {0}")]
    ConventionMismatch(String),

    #[error("network graph is disconnected ({components} components)")]
    DisconnectedGraph { components: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("cannot stitch clique eigenvectors: {0}")]
    Stitch(String),

    #[error("simplified SDP infeasible even with every clique problematic (sigma = 1)")]
    ExhaustedEscalation,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("empty dual vector")]
    EmptyVector,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Short machine-readable tag used in structured error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "ParseError",
            Error::Validation(_) => "ValidationError",
            Error::DegenerateBranch { .. } => "DegenerateBranch",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::InfeasibleStart(_) => "InfeasibleStart",
            Error::ConventionMismatch(_) => "ConventionMismatch",
            Error::DisconnectedGraph { .. } => "DisconnectedGraph",
            Error::Model(_) => "ModelError",
            Error::Stitch(_) => "StitchError",
            Error::ExhaustedEscalation => "ExhaustedEscalation",
            Error::NumericalFailure(_) => "NumericalFailure",
            Error::EmptyVector => "EmptyVector",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
