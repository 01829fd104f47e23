use std::fmt;

/// Failure classes, each mapped to a process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or input files (exit 1).
    Usage(String),
    /// A numerical routine failed (exit 2).
    Numerical(delaytherm::Error),
    /// A comparison ran and at least one check failed (exit 3).
    Comparison(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Comparison(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Comparison(m) => write!(f, "comparison failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<delaytherm::Error> for CliError {
    fn from(e: delaytherm::Error) -> Self {
        match e {
            delaytherm::Error::Io(m) | delaytherm::Error::Parse(m) => CliError::Usage(m),
            other => CliError::Numerical(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("csv: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
