use std::path::PathBuf;

/// Failures surfaced by the command line, each mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read {}: {source}", .path.display())]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot write {}: {source}", .path.display())]
    Write { path: PathBuf, source: std::io::Error },

    /// Malformed or inconsistent input data.
    #[error("{0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Too many failed replications; `log` names each one.
    #[error("{source}\n{}", .log.join("\n"))]
    SkipRate { source: pfgls_core::Error, log: Vec<String> },

    #[error(transparent)]
    Core(#[from] pfgls_core::Error),
}

impl CliError {
    /// 1 input/data, 2 numerical, 3 configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. } | CliError::Write { .. } | CliError::Data(_) => 1,
            CliError::Config(_) => 3,
            CliError::SkipRate { .. } => 2,
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(e) => match e.root() {
                pfgls_core::Error::InvalidConfig(_) => 3,
                _ => 1,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
