use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("site {site} out of range for lattice with {count} sites")]
    SiteOutOfRange { site: usize, count: usize },

    #[error("checkerboard pattern requires even extents, got {0:?}")]
    OddExtent(Vec<usize>),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("sector too large: {size} configurations exceeds cap {cap}")]
    SectorTooLarge { size: u128, cap: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("Lanczos did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("degenerate ground state (gap {gap:e}); observables are ill-defined")]
    DegenerateGroundState { gap: f64 },

    #[error("energy table has no entry for N = {0}")]
    MissingEnergy(usize),

    #[error("solver failed for N = {n}: {source}")]
    Sector {
        n: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("batch norm in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),

    #[error("backward pass does not match the recorded forward pass: {0}")]
    TapeMismatch(String),

    #[error("channel mismatch: expected {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("rotation requires square extents, got {0:?}")]
    NonSquare(Vec<usize>),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("format version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::SiteOutOfRange { .. } => "site_out_of_range",
            Error::OddExtent(_) => "odd_extent",
            Error::InvalidParams(_) => "invalid_params",
            Error::SectorTooLarge { .. } => "sector_too_large",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotConverged { .. } => "not_converged",
            Error::DegenerateGroundState { .. } => "degenerate_ground_state",
            Error::MissingEnergy(_) => "missing_energy",
            Error::Sector { .. } => "sector_failure",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::BatchTooSmall(_) => "batch_too_small",
            Error::TapeMismatch(_) => "tape_mismatch",
            Error::ChannelMismatch { .. } => "channel_mismatch",
            Error::NonSquare(_) => "non_square",
            Error::Truncated(_) => "truncated_payload",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Format(_) => "format",
            Error::Diverged { .. } => "diverged",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
