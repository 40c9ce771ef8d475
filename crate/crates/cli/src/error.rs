use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("numerical failure: {0}")]
    Numerical(twospeed::Error),

    #[error("consistency checks failed: {}", .0.join("; "))]
    Consistency(Vec<String>),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 0 ok, 1 config, 2 assumption, 3 numerical, 4 consistency.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output { .. } => 1,
            CliError::Assumption(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Consistency(_) => 4,
        }
    }
}

impl From<twospeed::Error> for CliError {
    fn from(err: twospeed::Error) -> Self {
        if err.is_config() {
            CliError::Config(err.to_string())
        } else {
            CliError::Numerical(err)
        }
    }
}
