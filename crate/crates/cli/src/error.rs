use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] prlstm::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(prlstm::Error::InvalidInput(_)) => 2,
            CliError::Core(prlstm::Error::Divergence { .. }) => 3,
            CliError::Core(prlstm::Error::OutOfMemory { .. }) => 4,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "divergence",
            4 => "resource",
            _ => "runtime",
        }
    }

    /// Single-line JSON form written to stderr.
    pub fn to_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "code": self.exit_code(), "message": self.to_string() }).to_string()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(prlstm::Error::Json(e))
    }
}
