use thiserror::Error;

/// Errors produced by the numerical kernels and dynamics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{method} failed to converge after {iterations} iterations")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
    },

    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize },

    #[error("at step {step}: {source}")]
    AtStep { step: usize, source: Box<Error> },
}

impl Error {
    /// Tags `self` with the trajectory step it occurred at.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            e @ (Self::AtStep { .. } | Self::Diverged { .. }) => e,
            e => Self::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Step recorded by [`Error::at_step`] or [`Error::Diverged`].
    pub fn step(&self) -> Option<usize> {
        match self {
            Self::AtStep { step, .. } | Self::Diverged { step } => Some(*step),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
