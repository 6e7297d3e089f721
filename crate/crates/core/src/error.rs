use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("invalid height {0} cm (must be positive)")]
    InvalidHeight(f64),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("empty sample set")]
    EmptyInput,

    #[error("quantile {0} outside (0, 1]")]
    InvalidQuantile(f64),

    #[error("time {t} s outside [0, {max}] s")]
    OutOfRange { t: f64, max: f64 },

    #[error("window lies outside the frame")]
    OutOfFrame,

    #[error("target lost: search window holds no backprojection weight")]
    LostTarget,

    #[error("histograms have different bin counts ({0} vs {1})")]
    IncompatibleHistogram(usize, usize),

    #[error("covariance factorization failed")]
    NumericalDegeneracy,

    #[error("similarity {0} outside [0, 1]")]
    InvalidSimilarity(f64),

    #[error("acquisition incomplete: found {found:?}, wanted {wanted:?}")]
    AcquisitionIncomplete { found: Vec<u32>, wanted: Vec<u32> },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("malformed PGM: {0}")]
    Pgm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
