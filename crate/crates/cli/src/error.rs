use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<geqlab::Error> for CliError {
    fn from(e: geqlab::Error) -> Self {
        use geqlab::Error as E;
        match e {
            E::Dimension { .. } | E::InvalidArgument(_) => CliError::Config(e.to_string()),
            E::Io(_) | E::Json(_) | E::BadMagic { .. } | E::Truncated { .. } | E::LengthMismatch { .. } | E::Format(_) => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
