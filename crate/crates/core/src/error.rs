use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("not identifiable: {0}")]
    Unidentifiable(String),
    #[error("unknown center `{0}`")]
    UnknownCenter(String),
    #[error("computation failed: {0}")]
    Computation(String),
}

impl Error {
    /// Stable machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::Unidentifiable(_) => "unidentifiable",
            Error::UnknownCenter(_) => "unknown_center",
            Error::Computation(_) => "computation",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
