use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("collision: separation {separation:e} below floor {floor:e}")]
    Collision { separation: f64, floor: f64 },
    #[error("numerical blow-up at step {step}")]
    Blowup { step: usize },
    #[error("compatibility violated, residual {residual:e}")]
    Compatibility { residual: f64 },
    #[error("no root: {0}")]
    NoSolution(String),
    #[error("ambiguous root, brackets {brackets:?}")]
    Ambiguous { brackets: Vec<(f64, f64)> },
    #[error("convergence failure after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("singularity: {0}")]
    Singularity(String),
    #[error("placement error: {0}")]
    Placement(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by invalid input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Validation(_)
                | Error::Assumption(_)
                | Error::Compatibility { .. }
                | Error::Placement(_)
                | Error::Resolution(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
