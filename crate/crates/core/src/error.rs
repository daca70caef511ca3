use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SmtError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SmtError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image format error: {0}")]
    Format(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("division degeneracy: {0}")]
    DivisionDegeneracy(String),

    #[error("numerical consistency check failed: {0}")]
    Numerical(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl SmtError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SmtError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by a defect in the pipeline.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            SmtError::Numerical(_) | SmtError::Divergence { .. }
        )
    }
}

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SmtError::Parameter(msg.into()))
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SmtError::Shape(msg.into()))
}
