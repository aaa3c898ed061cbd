use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("polynomial expansion reached degree {degree}, above the configured maximum of {max_degree}")]
    ExpansionOverflow { degree: u32, max_degree: u32 },

    #[error("disturbance window covers {available} lags but lag {required} is referenced")]
    WindowTooShort { required: usize, available: usize },

    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("no alpha value for slot {level}:{index}")]
    MissingAlpha { level: usize, index: usize },

    #[error("slot {level}:{index} is not part of the alpha skeleton")]
    UnknownSlot { level: usize, index: usize },

    #[error("alpha parameters do not match the ones the g-table was built with")]
    AlphaMismatch,

    #[error("level {level} produced monomial {monomial} outside the structural support")]
    SupportMismatch { level: usize, monomial: String },

    #[error("invalid cost weights: {0}")]
    InvalidCost(String),

    #[error("invalid disturbance model: {0}")]
    InvalidDisturbance(String),

    #[error("closed loop diverged at step {step} (|x|_inf = {norm:e})")]
    Divergence { step: usize, norm: f64 },

    #[error("achievability residual {residual:e} exceeds tolerance {tolerance:e}")]
    AchievabilityViolation { residual: f64, tolerance: f64 },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("missing model parameter `{0}`")]
    MissingParameter(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },

    #[error("fingerprint mismatch: archive built for {found}, model is {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ExpansionOverflow { .. } | Error::SupportMismatch { .. } => 3,
            Error::AchievabilityViolation { .. } => 4,
            Error::Divergence { .. } => 5,
            Error::Io(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
