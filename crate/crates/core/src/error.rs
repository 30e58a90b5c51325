use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("reference point {point:?} lies outside the reference element")]
    OutOfRange { point: Vec<f64> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cannot ingest {path}: {message} (byte offset {position})")]
    Ingestion {
        path: PathBuf,
        position: usize,
        message: String,
    },

    /// Input pair violates the endpoint hypothesis (equal boundary traces, positive bounds).
    #[error("endpoint hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("ellipticity lost: coefficient {value} at node {node} is below {floor}")]
    Ellipticity { node: usize, value: f64, floor: f64 },

    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:e})")]
    SolverDivergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("density {value} at node {node} is below the division guard {floor}")]
    DivisionGuard { node: usize, value: f64, floor: f64 },

    #[error("mass mismatch: {0} vs {1}")]
    MassMismatch(f64, f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fixed-point iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot write {path}: {source}")]
    Export {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used by the machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid-grid",
            Error::OutOfRange { .. } => "out-of-range",
            Error::Shape(_) => "shape",
            Error::Ingestion { .. } => "ingestion",
            Error::Hypothesis(_) => "hypothesis-violation",
            Error::Degenerate(_) => "degenerate-input",
            Error::Ellipticity { .. } => "ellipticity",
            Error::SolverDivergence { .. } => "solver-divergence",
            Error::DivisionGuard { .. } => "division-guard",
            Error::MassMismatch(..) => "mass-mismatch",
            Error::Config(_) => "invalid-config",
            Error::Iteration { source, .. } => source.kind(),
            Error::Export { .. } => "export",
            Error::Io { .. } => "io",
            Error::Artifact { .. } => "artifact",
        }
    }
}
