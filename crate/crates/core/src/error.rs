use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (||M + M^T||_F = {0:e})")]
    NotSkew(f64),
    #[error("matrix is not a rotation (orthogonality error {orth:e}, det {det})")]
    NotRotation { orth: f64, det: f64 },
    #[error("pitch {0} rad is within the gimbal-lock guard band")]
    GimbalLock(f64),
    #[error("matrix is degenerate (smallest singular value {0:e})")]
    Degenerate(f64),
    #[error("state became non-finite at step {0}")]
    NonFiniteState(usize),
    #[error("inertia tensor is not invertible")]
    SingularInertia,
    #[error("stance set is empty while forces are expected")]
    EmptyStance,
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("dictionary dimension {0} exceeds the 10^4 limit")]
    DegreeOverflow(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("missing schedule data: {0}")]
    MissingScheduleData(String),
    #[error("contact schedule has {got} stages, horizon needs {expected}")]
    ScheduleMismatch { expected: usize, got: usize },
    #[error("controller variant requires a {0} model")]
    ModelMissing(&'static str),
    #[error("quadratic program is infeasible")]
    Infeasible,
    #[error("quadratic program hit the iteration limit ({0})")]
    MaxIter(usize),
    #[error("closed-loop run diverged at t = {t:.3} s: {reason}")]
    RunDiverged { t: f64, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
