use isac_core::IsacError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] IsacError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                IsacError::InvalidArgument(_)
                | IsacError::Scene(_)
                | IsacError::ScheduleLength { .. }
                | IsacError::SubarrayOutOfRange { .. }
                | IsacError::ArccosDomain(_) => 2,
                _ => 3,
            },
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}
