use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] scr_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },

    #[error("outputs written, but {0}")]
    Unconverged(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// 2 validation, 3 convergence failure, 4 I/O.
    pub fn exit_code(&self) -> u8 {
        use scr_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Read { .. } | CliError::Write { .. } => 4,
            CliError::Unconverged(_) => 3,
            CliError::Core(e) => match e {
                E::Validation(_) | E::Parameter(_) => 2,
                E::Diverged { .. } | E::Separation { .. } | E::NotConverged { .. } | E::Structural(_) | E::BootstrapFailures { .. } => 3,
                E::Io(_) => 4,
                // Malformed content is a validation problem; a failing reader is I/O.
                E::Csv(c) if c.is_io_error() => 4,
                E::Json(j) if j.is_io() => 4,
                E::Csv(_) | E::Json(_) => 2,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::config("x").exit_code(), 2);
        assert_eq!(CliError::Core(scr_core::Error::Validation("n".into())).exit_code(), 2);
        assert_eq!(CliError::Core(scr_core::Error::Structural("s".into())).exit_code(), 3);
        assert_eq!(CliError::Core(scr_core::Error::BootstrapFailures { failed: 30, total: 200 }).exit_code(), 3);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::Read { path: "a".into(), source: io }.exit_code(), 4);
        let bad: serde_json::Error = serde_json::from_str::<u8>("x").unwrap_err();
        assert_eq!(CliError::Core(bad.into()).exit_code(), 2);
        assert_eq!(CliError::Unconverged("arm 1".into()).exit_code(), 3);
    }
}
