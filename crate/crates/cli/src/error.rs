use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] arob_core::Error),
    #[error("{0}")]
    RunFailure(String),
}

impl CliError {
    /// 1 usage, 2 data or format, 3 run failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_data_error() => 2,
            CliError::Core(
                arob_core::Error::InvalidConfig(_) | arob_core::Error::InvalidSpec(_),
            ) => 1,
            CliError::Core(_) | CliError::RunFailure(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "usage",
            2 => "data",
            _ => "run",
        }
    }

    /// One-line diagnostic: `error kind=<kind> code=<n>: <message>`.
    pub fn diagnostic(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!(
            "error kind={} code={}: {msg}",
            self.kind(),
            self.exit_code()
        )
    }
}
