use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::File { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("network is disconnected: bus {0} cannot be reached from bus 0")]
    Disconnected(usize),

    #[error("branch {index} ({from}-{to}) has zero series impedance")]
    ZeroImpedance { index: usize, from: usize, to: usize },

    #[error("{kind} device {index} references missing bus {bus}")]
    InvalidBus { kind: &'static str, index: usize, bus: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("area {area} local solve failed at ALADIN iteration {iteration}: {reason}")]
    LocalSolve { area: usize, iteration: usize, reason: String },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
