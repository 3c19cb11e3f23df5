use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("{0}")]
    Parse(String),
}

impl ConfigError {
    pub(crate) fn invalid(field: &str, reason: &str) -> Self {
        ConfigError::Invalid {
            field: field.to_owned(),
            reason: reason.to_owned(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("violated constraint has an all-zero input gradient")]
    ZeroGradient,
    #[error("malformed problem: {0}")]
    Malformed(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImpairmentError {
    #[error("state matrix is not Hurwitz (max real eigenvalue {0})")]
    NotHurwitz(f64),
    #[error("channel operator {0} has no linear frequency response")]
    NotLinear(String),
    #[error("malformed channel: {0}")]
    Malformed(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FastLoopError {
    #[error("no stability transition in delay/eps bracket [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("invalid fast-loop model: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no collision-free placement after {0} attempts (config too dense)")]
    TooDense(usize),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(String),
}
