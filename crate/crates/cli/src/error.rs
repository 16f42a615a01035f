use std::fmt;

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration; one message per violated field. Exit code 2.
    Config(Vec<String>),
    /// Unreadable or inconsistent input data. Exit code 3.
    Data(String),
    /// Failure while computing or writing results. Exit code 4.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub fn data(e: impl fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(v) => {
                writeln!(
                    f,
                    "error[config]: {} problem(s) in the configuration",
                    v.len()
                )?;
                for m in v {
                    writeln!(f, "  - {m}")?;
                }
                Ok(())
            }
            CliError::Data(m) => writeln!(f, "error[data]: {m}"),
            CliError::Runtime(m) => writeln!(f, "error[runtime]: {m}"),
        }
    }
}
