//! Crate-wide error type.

use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {edge} attaches vertex v{vertex} to itself; self-loops are not supported")]
    LoopNotSupported { edge: usize, vertex: usize },
    #[error("graph is not connected")]
    Disconnected,
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("active node count {n0} outside 1..={n}")]
    InvalidActiveCount { n0: usize, n: usize },
    #[error("noise matrix entry C[{row}][{col}] = {value} is negative")]
    NegativeNoiseEntry { row: usize, col: usize, value: f64 },
    #[error("active noise block C_a is identically zero")]
    NoActiveNoise,
    #[error("expected a {expected} matrix, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("edge {edge} needs at least 2 subdivisions, got {got}")]
    InvalidSubdivision { edge: usize, got: usize },
    #[error("potential on edge {edge} has {got} samples, mesh wants {expected}")]
    PotentialLengthMismatch { edge: usize, expected: usize, got: usize },
    #[error("potential on edge {edge} contains a non-finite sample")]
    NonFinitePotential { edge: usize },
    #[error("passive coupling block is singular; the passive condition set is ill-posed")]
    SingularPassiveBlock,
    #[error("lambda = {0} lies in the spectrum of the generator")]
    SpectrumHit(Complex64),
    #[error("eigenvector matrix condition number {cond:.3e} exceeds {limit:.1e}")]
    NonDiagonalizable { cond: f64, limit: f64 },
    #[error("eigensolver failure: {0}")]
    EigensolverFailure(String),
    #[error("negative time t = {0}")]
    NegativeTime(f64),
    #[error("semigroup does not converge to a rank-one projection for this generator")]
    NotProjectionCase,
    #[error("boundary value problem is not uniquely solvable")]
    NotUniquelySolvable,
    #[error("circulant embedding not positive semidefinite (min eigenvalue {0:.3e}); fall back to Cholesky sampling")]
    EmbeddingNotPsd(f64),
    #[error("circulant embedding requires a uniform grid")]
    NonUniformGrid,
    #[error("Hurst parameter {0} out of range: this operation requires H > 1/2")]
    HurstTooLow(f64),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("alpha = {alpha} too large for H = {hurst}: requires alpha < min(1/4, H)")]
    AlphaTooLarge { alpha: f64, hurst: f64 },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing section `{0}`")]
    MissingSection(String),
    #[error("`{key}` = {value} out of range: {reason}")]
    OutOfRange {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("linear algebra backend error: {0}")]
    Linalg(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
