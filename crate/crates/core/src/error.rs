use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("simulation failed at t = {t}: {detail}")]
    Simulation { t: f64, detail: String },

    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    #[error(
        "calibration infeasible at step {k}: no grid threshold reaches p <= {budget:.3e} \
         with n_k = {n}; a zero-risk pass needs at least {min_n} calibration samples"
    )]
    CalibrationInfeasible {
        k: usize,
        n: usize,
        budget: f64,
        min_n: usize,
    },

    #[error("degenerate threshold grid at step {k}: all calibration scores equal {value}")]
    DegenerateGrid { k: usize, value: f64 },

    #[error("grid too small: {outside} of {total} states fall outside the evaluation grid")]
    GridTooSmall { outside: usize, total: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("stale artifact {}: {detail}", path.display())]
    Stale { path: PathBuf, detail: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
