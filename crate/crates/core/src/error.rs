use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch between {left} and {right}: {detail}")]
    DimensionMismatch {
        left: &'static str,
        right: &'static str,
        detail: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {what} at {position}")]
    NonFinite { what: String, position: String },

    #[error("lasso did not converge after {iterations} sweeps (kkt residual {kkt_residual:e})")]
    LassoNotConverged { iterations: usize, kkt_residual: f64 },

    #[error("{axis} {index}: {source}")]
    Subproblem {
        axis: &'static str,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("objective became non-finite at outer iteration {iteration}")]
    NumericalBlowUp { iteration: usize, trace: Vec<f64> },

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("evaluation split has no test images")]
    EmptyTestSet,

    /// `line` is 1-based; 0 means the error concerns the whole file.
    #[error("{}: {message}", location(path, *line))]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported format version {found} (supported: {supported:?})")]
    UnsupportedVersion { found: u32, supported: &'static [u32] },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(path: &std::path::Path, line: usize) -> String {
    if line == 0 {
        path.display().to_string()
    } else {
        format!("{}:{line}", path.display())
    }
}

impl Error {
    pub(crate) fn dims(left: &'static str, right: &'static str, detail: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            left,
            right,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures that originate in the numerics rather than in the
    /// inputs (used by the CLI to pick its exit code).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::LassoNotConverged { .. } | Error::NumericalBlowUp { .. } => true,
            Error::Subproblem { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
