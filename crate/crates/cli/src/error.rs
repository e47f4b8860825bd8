use std::fmt;

/// A failure mapped to a process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

/// Exit code of a failed gradient check or an I/O problem.
pub const EXIT_FAILURE: i32 = 1;
/// Exit code of an invalid configuration or input file.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code of a numerical failure during compute.
pub const EXIT_NUMERICAL: i32 = 3;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }

    /// Errors while reading inputs and building the problem.
    pub fn setup(e: stochcoil::Error) -> Self {
        Self::config(e.to_string())
    }

    /// Errors while computing.
    pub fn compute(e: stochcoil::Error) -> Self {
        match e {
            stochcoil::Error::Io(_) | stochcoil::Error::Csv(_) | stochcoil::Error::Json(_) => {
                Self::failure(e.to_string())
            }
            _ => Self::numerical(e.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::failure(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::failure(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::failure(e.to_string())
    }
}
