use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("curvature must be positive and finite, got {0}")]
    InvalidCurvature(f64),
    #[error("curvature mismatch: {left} vs {right}")]
    CurvatureMismatch { left: f64, right: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty input")]
    EmptyInput,
    #[error("insufficient points: need at least {need}, got {got}")]
    InsufficientPoints { need: usize, got: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("numerical fault in {0}")]
    NumericalFault(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("tape was already consumed by a backward pass")]
    DetachedTape,
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error("need at least 2 prototypes, got {0}")]
    InsufficientPrototypes(usize),
    #[error("class {0} has no support points")]
    EmptyClass(u32),
    #[error("rank {rank} exceeds dimension {dim}")]
    RankTooLarge { rank: usize, dim: usize },
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Numerical faults map to a distinct process exit status in the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalFault(_))
    }
}
