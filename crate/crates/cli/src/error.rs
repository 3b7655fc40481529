use thiserror::Error;

/// Failures of a subcommand, grouped by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Numerical(_) | Self::Io(_) => 1,
            Self::Assumption(_) => 2,
            Self::Config(_) => 64,
        }
    }
}

impl From<tracefem::Error> for CliError {
    fn from(e: tracefem::Error) -> Self {
        use tracefem::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidConfig(_) | E::Unsupported(_) => Self::Config(msg),
            E::EmptyIntersection | E::AliasRisk { .. } | E::DegeneratePoint(..) => Self::Assumption(msg),
            E::Io(io) => Self::Io(io),
            _ => Self::Numerical(msg),
        }
    }
}
