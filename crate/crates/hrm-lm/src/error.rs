use std::path::PathBuf;

use hrm_lm_core::Error as CoreError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_ACCEPTANCE: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("cannot read config `{path}`: {source}")]
    ConfigFile { path: PathBuf, source: std::io::Error },
    #[error("cannot read `{path}`: {source}")]
    Input { path: PathBuf, source: std::io::Error },
    #[error("cannot write `{path}`: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Refused(String),
    #[error("{0}")]
    CheckFailed(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Syntax { .. } | CliError::ConfigFile { .. } | CliError::Refused(_) => {
                EXIT_CONFIG
            }
            CliError::Input { .. } | CliError::Output { .. } | CliError::Json(_) | CliError::Csv(_) => EXIT_DATA,
            CliError::CheckFailed(_) => EXIT_ACCEPTANCE,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Vocab { .. } => EXIT_CONFIG,
                CoreError::Data(_) | CoreError::Checkpoint(_) | CoreError::Schema { .. } => EXIT_DATA,
                _ => EXIT_NUMERIC,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert_eq!(CliError::config("model.d", "bad").exit_code(), 2);
        assert_eq!(CliError::Core(CoreError::Data("x".into())).exit_code(), 3);
        assert_eq!(CliError::Core(CoreError::NonFinite { op: "loss" }).exit_code(), 4);
        assert_eq!(CliError::CheckFailed("x".into()).exit_code(), 5);
        let schema = CoreError::Schema {
            name: "embedding".into(),
            detail: "shape".into(),
        };
        assert_eq!(CliError::Core(schema).exit_code(), 3);
    }
}
