use thiserror::Error;

pub type Result<T> = std::result::Result<T, IsacError>;

#[derive(Debug, Error)]
pub enum IsacError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("sweep length {total} is not a positive multiple of {beams} beams")]
    ScheduleLength { total: usize, beams: usize },

    #[error("arccos argument {0} outside [-1, 1]; element spacing too small for the sweep grid")]
    ArccosDomain(f64),

    #[error("subarray {m_sub}x{n_sub} at origin ({i}, {j}) does not fit the array")]
    SubarrayOutOfRange { i: usize, j: usize, m_sub: usize, n_sub: usize },

    #[error("constraint {0} has a zero generator vector")]
    ZeroConstraint(usize),

    #[error(
        "interior point solver stopped after {iterations} iterations \
         (gap {gap:.3e}, primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e})"
    )]
    NonConvergence { iterations: usize, gap: f64, primal_residual: f64, dual_residual: f64 },

    #[error("ill-conditioned steering matrix (condition estimate {0:.3e})")]
    IllConditioned(f64),

    #[error("no sweep beam covers the requested angle")]
    NoCoverage,

    #[error("missing beamformer for symbol {q} ({role})")]
    MissingBeam { q: usize, role: String },

    #[error("zero modulation symbol at ({p}, {q})")]
    ZeroSymbol { p: usize, q: usize },

    #[error("near-zero denominator {0:.3e}")]
    NearZero(f64),

    #[error("scene file: {0}")]
    Scene(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
