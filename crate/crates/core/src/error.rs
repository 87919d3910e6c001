use thiserror::Error;

pub type Result<T, E = PsmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PsmError {
    #[error("mass matrix is not positive definite at theta = {theta:?}")]
    SingularMass { theta: [f64; 3] },

    #[error("pendulum state diverged at t = {t}: {reason}")]
    StateDiverged { t: f64, reason: String },

    #[error("pendulum left the upper-body workspace at t = {t} (theta = {theta:?})")]
    OutOfWorkspace { t: f64, theta: [f64; 3] },

    #[error("series of length {len} is too short for zero-phase filtering (need at least {required})")]
    SeriesTooShort { len: usize, required: usize },

    #[error("gravity reference has not been calibrated yet")]
    NotCalibrated,

    #[error("grid index ({n}, {m}) outside {n_theta}x{m_omega} grid")]
    IndexOutOfGrid {
        n: usize,
        m: usize,
        n_theta: usize,
        m_omega: usize,
    },

    #[error("no recordings supplied")]
    EmptyRecordings,

    #[error("evaluation window not full ({have} of {need} samples)")]
    WindowNotFull { have: usize, need: usize },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("step {step} (t = {t}): {source}")]
    Step {
        step: u64,
        t: f64,
        #[source]
        source: Box<PsmError>,
    },

    #[error("unsupported dataset version {0}")]
    UnsupportedVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl PsmError {
    /// Short machine-readable tag, used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            PsmError::SingularMass { .. } => "SingularMass",
            PsmError::StateDiverged { .. } => "StateDiverged",
            PsmError::OutOfWorkspace { .. } => "OutOfWorkspace",
            PsmError::SeriesTooShort { .. } => "SeriesTooShort",
            PsmError::NotCalibrated => "NotCalibrated",
            PsmError::IndexOutOfGrid { .. } => "IndexOutOfGrid",
            PsmError::EmptyRecordings => "EmptyRecordings",
            PsmError::WindowNotFull { .. } => "WindowNotFull",
            PsmError::InvalidParams(_) => "InvalidParams",
            PsmError::InvalidSample(_) => "InvalidSample",
            PsmError::Step { source, .. } => source.kind(),
            PsmError::UnsupportedVersion(_) => "UnsupportedVersion",
            PsmError::Io(_) => "Io",
            PsmError::Json(_) => "Json",
            PsmError::Csv(_) => "Csv",
            PsmError::Config(_) => "Config",
        }
    }
}
