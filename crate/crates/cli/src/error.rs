use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or unparsable config file.
    #[error("config error: {0}")]
    Config(String),
    /// A parsed config that breaks one or more rules.
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(optsub::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<optsub::Error> for CliError {
    fn from(e: optsub::Error) -> Self {
        use optsub::Error as E;
        match e {
            E::MissingResponses { .. }
            | E::InvalidResponse { .. }
            | E::ShapeMismatch(_)
            | E::EmptyInput(_) => CliError::Data(e.to_string()),
            E::InvalidArgument(msg) => CliError::Config(msg),
            other => CliError::Numerical(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
