use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library reports. The variant name doubles as the
/// machine-readable error class printed by the command-line front-end.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("edge {edge} is a loop at vertex {vertex}")]
    LoopEdge { edge: String, vertex: String },
    #[error("edges {edge} and {other} both connect {a} and {b}")]
    ParallelEdge {
        edge: String,
        other: String,
        a: String,
        b: String,
    },
    #[error("edge {edge} has nonpositive or non-finite length {length}")]
    NonpositiveLength { edge: String, length: f64 },
    #[error("edge {edge} has nonpositive or non-finite conductance {value}")]
    NonpositiveConductance { edge: String, value: f64 },
    #[error("edge {edge} has negative or non-finite potential {value}")]
    NegativePotential { edge: String, value: f64 },
    #[error("unknown vertex {0}")]
    UnknownVertex(String),
    #[error("vertex {0} is declared twice")]
    DuplicateVertex(String),
    #[error("edge {edge}: invalid coefficient profile ({reason})")]
    InvalidProfile { edge: String, reason: String },
    #[error("graph description: {0}")]
    GraphFormat(String),

    #[error("mesh size must be positive and finite, got {0}")]
    InvalidMeshSize(f64),
    #[error("edge {edge} would receive only {cells} cell(s); at least 2 are required")]
    MeshTooCoarse { edge: String, cells: usize },
    #[error("function jumps at vertex {vertex}; a continuous function is required")]
    BrokenSpaceInput { vertex: String },
    #[error("operation needs a {expected} mesh, got a {found} one")]
    SpaceMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("requested {requested} modes but at most {max} are reliable on this mesh")]
    TooManyModes { requested: usize, max: usize },
    #[error("eigensolver failure: {0}")]
    SolverFailure(String),

    #[error("shift must be positive, got {0}")]
    NonpositiveShift(f64),
    #[error("objects were computed on different meshes")]
    MeshMismatch,
    #[error("vertex condition system is numerically singular")]
    SingularVertexSystem,
    #[error("no contraction found before gamma exceeded {gamma}")]
    GammaOverflow { gamma: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("covariance is not positive semidefinite (smallest eigenvalue {min_eigenvalue})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("covariance is not symmetric (max asymmetry {asymmetry})")]
    NotSymmetric { asymmetry: f64 },
    #[error("invalid time grid: dt = {dt}, horizon = {horizon}")]
    InvalidTimeGrid { dt: f64, horizon: f64 },
    #[error("heat-kernel trace series does not converge (tail slope {slope})")]
    TraceDivergence { slope: f64 },

    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },
    #[error("invalid drift: {0}")]
    InvalidDrift(String),

    #[error("series needs at least {required} modes, basis has {available}")]
    InsufficientModes { available: usize, required: usize },
    #[error("fractional exponent {0} outside (-1, 1)")]
    InvalidExponent(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Stable class name of the error, e.g. `"LoopEdge"`.
    pub fn class(&self) -> &'static str {
        match self {
            Error::LoopEdge { .. } => "LoopEdge",
            Error::ParallelEdge { .. } => "ParallelEdge",
            Error::NonpositiveLength { .. } => "NonpositiveLength",
            Error::NonpositiveConductance { .. } => "NonpositiveConductance",
            Error::NegativePotential { .. } => "NegativePotential",
            Error::UnknownVertex(_) => "UnknownVertex",
            Error::DuplicateVertex(_) => "DuplicateVertex",
            Error::InvalidProfile { .. } => "InvalidProfile",
            Error::GraphFormat(_) => "GraphFormat",
            Error::InvalidMeshSize(_) => "InvalidMeshSize",
            Error::MeshTooCoarse { .. } => "MeshTooCoarse",
            Error::BrokenSpaceInput { .. } => "BrokenSpaceInput",
            Error::SpaceMismatch { .. } => "SpaceMismatch",
            Error::TooManyModes { .. } => "TooManyModes",
            Error::SolverFailure(_) => "SolverFailure",
            Error::NonpositiveShift(_) => "NonpositiveShift",
            Error::MeshMismatch => "MeshMismatch",
            Error::SingularVertexSystem => "SingularVertexSystem",
            Error::GammaOverflow { .. } => "GammaOverflow",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NotPositiveSemidefinite { .. } => "NotPositiveSemidefinite",
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::InvalidTimeGrid { .. } => "InvalidTimeGrid",
            Error::TraceDivergence { .. } => "TraceDivergence",
            Error::NonFiniteState { .. } => "NonFiniteState",
            Error::InvalidDrift(_) => "InvalidDrift",
            Error::InsufficientModes { .. } => "InsufficientModes",
            Error::InvalidExponent(_) => "InvalidExponent",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }
}
