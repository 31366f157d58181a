use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("invalid value for `{key}`: {value} (legal range: {range})")]
    Invalid {
        key: String,
        value: String,
        range: String,
    },

    #[error("unknown agent `{0}`")]
    UnknownAgent(String),

    #[error("malformed policy file: {0}")]
    Policy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(key: &str, value: impl ToString, range: &str) -> Error {
    Error::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        range: range.to_string(),
    }
}
