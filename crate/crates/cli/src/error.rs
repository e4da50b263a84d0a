use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// `field` is the config key at fault.
    #[error("config error in {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn config(field: &'static str, message: impl Into<String>) -> Self {
        Self::Config { field, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => EXIT_CONFIG,
            Self::Backend(_) => EXIT_BACKEND,
            Self::Numerical(_) => EXIT_NUMERICAL,
            Self::Io(_) => EXIT_IO,
        }
    }
}

impl From<meshstyle::train::TrainError> for CliError {
    fn from(e: meshstyle::train::TrainError) -> Self {
        use meshstyle::sds::SdsError;
        use meshstyle::train::TrainError;
        match e {
            TrainError::Sds(SdsError::Guidance(g)) => Self::Backend(g.to_string()),
            TrainError::Sds(SdsError::Render(r)) => Self::Numerical(r.to_string()),
            TrainError::NonFinite { .. } => Self::Numerical(e.to_string()),
            TrainError::Config(m) => Self::config("config", m),
            TrainError::Callback(m) => Self::Io(m),
        }
    }
}

impl From<meshstyle::imageio::ImageError> for CliError {
    fn from(e: meshstyle::imageio::ImageError) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<meshstyle::guidance::GuidanceError> for CliError {
    fn from(e: meshstyle::guidance::GuidanceError) -> Self {
        Self::Backend(e.to_string())
    }
}

impl From<meshstyle::eval::EvalError> for CliError {
    fn from(e: meshstyle::eval::EvalError) -> Self {
        use meshstyle::eval::EvalError;
        match e {
            EvalError::Backend(g) => Self::Backend(g.to_string()),
            EvalError::Image(i) => Self::Io(i.to_string()),
            EvalError::GroundTruthShape { .. } => Self::config("eval.ground_truth_dir", e.to_string()),
            EvalError::InvalidSet(m) => Self::config("eval.distractors", m),
            EvalError::Config(m) => Self::config("eval", m),
            other => Self::Backend(other.to_string()),
        }
    }
}
