use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("operator is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("operator is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("non-finite entry in operator")]
    NonFinite,
    #[error("unstable operator (spectral radius {0})")]
    Unstable(f64),
    #[error("unsupported higher-order Lyapunov order {0}")]
    UnsupportedOrder(u32),
    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },
    #[error("inner solve R + B'PB is numerically singular")]
    SingularInnerSolve,
    #[error("Gram matrix is singular: {0}")]
    SingularGram(String),
    #[error("empty grid or seed set")]
    EmptyGrid,
    #[error("bad spec: {0}")]
    BadSpec(String),
    #[error("trajectory segments are not contiguous: expected t={expected}, found t={found}")]
    GapBetweenSegments { expected: usize, found: usize },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

impl Error {
    pub fn name(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonSquare { .. } => "NonSquare",
            Error::NotSymmetric(_) => "NotSymmetric",
            Error::NonFinite => "NonFinite",
            Error::Unstable(_) => "Unstable",
            Error::UnsupportedOrder(_) => "UnsupportedOrder",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::SingularInnerSolve => "SingularInnerSolve",
            Error::SingularGram(_) => "SingularGram",
            Error::EmptyGrid => "EmptyGrid",
            Error::BadSpec(_) => "BadSpec",
            Error::GapBetweenSegments { .. } => "GapBetweenSegments",
            Error::DegenerateFit(_) => "DegenerateFit",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
