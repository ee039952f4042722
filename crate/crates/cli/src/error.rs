use thiserror::Error;

use mjspectra_core::Error as CoreError;

/// Failures surfaced by the driver; each maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },
    #[error("numerical failure in stage `{stage}`: {reason}")]
    Numerical { stage: String, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn config(path: &str, reason: impl ToString) -> Self {
        CliError::Config {
            path: path.to_string(),
            reason: reason.to_string(),
        }
    }

    pub fn numerical(stage: &str, reason: impl ToString) -> Self {
        CliError::Numerical {
            stage: stage.to_string(),
            reason: reason.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Maps a core error raised in `stage`: rejected parameters become config
/// errors under `section`, everything else a numerical failure.
pub fn in_stage<'a>(stage: &'a str, section: &'a str) -> impl Fn(CoreError) -> CliError + 'a {
    move |e| match e {
        CoreError::InvalidParameter { name, reason } => CliError::config(&format!("{section}.{name}"), reason),
        CoreError::InvalidModel(reason) => CliError::config("model", reason),
        other => CliError::numerical(stage, other),
    }
}
