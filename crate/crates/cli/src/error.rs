use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Schema(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] voldiff::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for anything wrong with the config, 3 for numerical aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use voldiff::Error as E;
        match self {
            Self::Schema(_) => 2,
            Self::Numerical(_) => 3,
            Self::Core(e) => match e {
                E::InvalidParameter(_) | E::Unsupported(_) | E::Json(_) => 2,
                E::Domain(_) | E::NonFiniteGradient { .. } => 3,
                E::InvalidInput(_) | E::CorruptFile { .. } | E::MissingMetadata(_) | E::Io(_) => 1,
            },
            Self::Io(_) => 1,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Schema(e.to_string())
    }
}
