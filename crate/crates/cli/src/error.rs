use lrnr_core::LrnrError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] LrnrError),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    /// 1 usage or configuration, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 3,
            CliError::Core(e) => match e {
                LrnrError::InvalidInput(_) | LrnrError::Unsupported(_) => 1,
                LrnrError::Singular { .. }
                | LrnrError::NumericOverflow { .. }
                | LrnrError::NonFiniteGradient { .. }
                | LrnrError::DegenerateBasis { .. } => 3,
                _ => 2,
            },
        }
    }
}
