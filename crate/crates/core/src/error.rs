use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A function with `|x|` in a denominator was evaluated at the origin.
    #[error("evaluation at the zero vector is undefined")]
    ZeroInput,

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("Monte Carlo estimate requested with zero samples")]
    NoSamples,

    #[error("expected a unit vector, found norm {0}")]
    NotUnitVector(f64),

    #[error("matrix is not orthogonal (max deviation {0:e})")]
    NotOrthogonal(f64),

    #[error("denominator {value} is within 4 standard errors ({std_error}) of zero")]
    DegenerateDenominator { value: f64, std_error: f64 },

    #[error("eigensolver did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("gradient flow diverged at step {step} (mode {mode})")]
    Unstable { step: usize, mode: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    /// Errors that mark a measure-zero sample point; Monte Carlo drivers redraw on these.
    pub fn is_resample(&self) -> bool {
        matches!(self, Error::ZeroInput)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
