use hybridvol::Error;

/// Command failures, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("convergence error: {0}")]
    Convergence(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Convergence(_) => 4,
            CliError::Internal(_) => 5,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Schema(_)
            | Error::DataIntegrity { .. }
            | Error::DuplicateDate { .. }
            | Error::InsufficientData(_)
            | Error::DegenerateScale(_)
            | Error::ZeroTarget { .. }
            | Error::InsufficientExceedances { .. }
            | Error::Misaligned(_)
            | Error::Io { .. }
            | Error::Csv(_) => CliError::Data(msg),
            Error::NumericOverflow { .. } | Error::NonConvergence(_) | Error::Divergence { .. } => {
                CliError::Convergence(msg)
            }
            Error::Constraint(_) | Error::Domain(_) => CliError::Config(msg),
            _ => CliError::Internal(msg),
        }
    }
}
