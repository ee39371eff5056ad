use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv {}: {message}", path.display())]
    Csv { path: PathBuf, message: String },

    #[error("non-numeric cell {value:?} at row {row}, column {column:?} in {}", path.display())]
    NonNumericCell {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("row-count mismatch: params has {params} rows, sims has {sims}")]
    RowCountMismatch { params: usize, sims: usize },

    #[error("observation file must hold exactly one row, found {0}")]
    ObservationRows(usize),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("feature maps come from different partitionings")]
    ProvenanceMismatch,

    #[error("factorization failed at pivot {pivot}; increase lambda")]
    Factorization { pivot: usize },

    #[error("solver residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("degenerate weight mass: weights sum to zero")]
    DegenerateWeightMass,

    #[error("acceptance starvation after {0} consecutive rejections; use a smaller gap depth")]
    AcceptanceStarvation(usize),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
