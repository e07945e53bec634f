use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid column weight r={r} for column length m={m}")]
    InvalidWeight { m: usize, r: usize },
    #[error("degenerate point: tangent space undefined (column equals the simplex centroid)")]
    DegeneratePoint,
    #[error("point is off the manifold: {0}")]
    OffManifold(String),
    #[error("retraction failed after {0} halvings")]
    RetractionFailure(usize),
    #[error("line search exceeded {max_backtracks} backtracks (gradient norm {grad_norm:e})")]
    LineSearchStall { max_backtracks: usize, grad_norm: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("objective needs at least two columns, got {0}")]
    TooFewColumns(usize),
    #[error("column {0} is zero")]
    ZeroColumn(usize),
    #[error("invalid field modulus {0}: must be prime")]
    InvalidField(u64),
    #[error("polynomial degree {degree} must satisfy 1 <= degree < p = {p}")]
    DegreeTooLarge { p: u64, degree: u32 },
    #[error("invalid sparsity k={k} for n={n}")]
    InvalidSparsity { n: usize, k: usize },
    #[error("finite input SNR requested for a zero measurement")]
    DegenerateSnr,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
