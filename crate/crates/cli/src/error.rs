use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    Missing(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error(transparent)]
    Core(#[from] beamid::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 2 config, 3 numerical failure, 4 missing or mismatched artifact, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) | CliError::Provenance(_) => 4,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(beamid::Error::Invalid(_) | beamid::Error::GridTooSmall { .. } | beamid::Error::Domain(_)) => 2,
            _ => 1,
        }
    }
}
