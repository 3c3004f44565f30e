use std::path::PathBuf;

/// Errors produced across the offline and online pipelines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("argument error: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported dimension {dims} (at most {max} supported)")]
    UnsupportedDimension { dims: usize, max: usize },

    #[error("evaluation error at cell {cell}, parameter {param}: {msg}")]
    Evaluation {
        cell: usize,
        param: usize,
        msg: String,
    },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("Newton iteration did not converge in {iterations} iterations (last update norm {last_norm:e})")]
    NonConvergence {
        iterations: usize,
        last_norm: f64,
        history: Vec<f64>,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("Cholesky factorization failed: {0}")]
    Cholesky(String),

    #[error("rank-deficient interpolation system at column {column}")]
    RankDeficient { column: usize },

    #[error("sparsity pattern mismatch: {0}")]
    Sparsity(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("incompatible operator: {0}")]
    Incompatible(String),

    #[error("parameter {param}: {source}")]
    AtParameter {
        param: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Config(_) => "config",
            Error::UnsupportedDimension { .. } => "unsupported_dimension",
            Error::Evaluation { .. } => "evaluation",
            Error::Assembly(_) => "assembly",
            Error::LinearSolve(_) => "linear_solve",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Shape(_) => "shape",
            Error::Degenerate(_) => "degenerate",
            Error::Cholesky(_) => "cholesky",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Sparsity(_) => "sparsity",
            Error::Format(_) => "format",
            Error::Corrupt(_) => "corrupt",
            Error::NotFound(_) => "not_found",
            Error::Incompatible(_) => "incompatible",
            Error::AtParameter { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn at_param(self, param: usize) -> Error {
        Error::AtParameter {
            param,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
