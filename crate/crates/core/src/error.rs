use thiserror::Error;

/// Errors raised across the library.
///
/// The variants fall into three families that the CLI maps to distinct exit
/// codes: invalid input (`Invalid*`, `Mismatch`), data problems (`Data`, `Io`,
/// `Csv`), and numerical failures (`Numerical`, `SamplerStalled`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Mismatch(String),

    #[error("grid mismatch: curves are defined on different grids")]
    GridMismatch,

    #[error("point outside the mechanism support: {0}")]
    OutsideSupport(String),

    #[error("data not clipped to the unit ball: record {index} has norm {norm}")]
    Unclipped { index: usize, norm: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rejection sampler stalled after {proposals} proposals ({accepted} accepted): {detail}")]
    SamplerStalled {
        proposals: u64,
        accepted: u64,
        detail: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short code used in metrics rows and CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Mismatch(_) => "mismatch",
            Error::GridMismatch => "grid_mismatch",
            Error::OutsideSupport(_) => "outside_support",
            Error::Unclipped { .. } => "unclipped",
            Error::Data(_) => "data",
            Error::Numerical(_) => "numerical",
            Error::SamplerStalled { .. } => "sampler_stalled",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
