use std::io;

use blockmcmc::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<CliError>,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for configuration problems, 3 for bad or missing data, 4 for
    /// resource limits, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Resource(_) => 4,
            CliError::Stage { source, .. } => source.exit_code(),
            CliError::Core(e) => match e {
                CoreError::InvalidArgument(_) | CoreError::Configuration(_) => 2,
                CoreError::Format { .. }
                | CoreError::InsufficientData(_)
                | CoreError::Io(_)
                | CoreError::Json(_) => 3,
                CoreError::ResourceLimit(_) => 4,
                CoreError::Internal(_) => 1,
            },
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ CliError::Stage { .. } => e,
            e => CliError::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
