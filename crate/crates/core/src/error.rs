use std::path::PathBuf;

use thiserror::Error;

use crate::game::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game: {}", format_violations(.0))]
    InvalidGame(Vec<Violation>),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("agent index {agent} out of range for {num_agents} agents")]
    AgentOutOfRange { agent: usize, num_agents: usize },

    #[error("observation {obs} out of range (observation space has {size} elements)")]
    ObservationOutOfRange { obs: usize, size: usize },

    #[error("action {action} out of range ({size} actions)")]
    ActionOutOfRange { action: usize, size: usize },

    #[error("mixture requires identical local state spaces, got sizes {0:?}")]
    HeterogeneousLocalSpaces(Vec<usize>),

    #[error("KL divergence undefined: p has mass {mass} at index {index} where q has none")]
    NotAbsolutelyContinuous { index: usize, mass: f64 },

    #[error("exact ops unavailable at this scale: {required} table entries exceed cap {cap}")]
    ExactCapExceeded { required: u128, cap: u128 },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    parts.join("; ")
}
