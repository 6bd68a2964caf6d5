use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("offset {0} does not map species {1} onto a lattice site")]
    OffsetOffLattice(String, usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("bond of zero length at site {site}")]
    SingularBond { site: usize },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(
        "{context}: Newton did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence {
        context: String,
        iterations: usize,
        residual: f64,
    },
    #[error("line search failed in {context} (residual {residual:e})")]
    LineSearch { context: String, residual: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("element {element}: {source}")]
    Element {
        element: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("instability at t = {time}: {reason}")]
    Unstable { time: f64, reason: String },
}

impl Error {
    pub fn in_element(self, element: usize) -> Error {
        Error::Element {
            element,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
