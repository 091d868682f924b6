use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] asiplab::error::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("report: {0}")]
    Report(String),
}
