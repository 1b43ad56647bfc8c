use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{vehicles} vehicles do not fit in {cells} automaton cells")]
    Capacity { vehicles: usize, cells: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
