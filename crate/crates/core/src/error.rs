use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmcError {
    /// Invalid run, kernel or model settings; detected before sampling starts.
    #[error("configuration error: {0}")]
    Config(String),
    /// A model callback returned a value outside its contract.
    #[error("model error: {0}")]
    Model(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("enumeration of {requested} paths exceeds the cap of {cap}")]
    Size { requested: u128, cap: u128 },
    /// The requested quantity is undefined for this input (e.g. IACT of a constant).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T, E = SmcError> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(SmcError::Config(msg.into()))
}
