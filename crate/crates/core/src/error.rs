use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error{}: {message}", layer_suffix(.layer))]
    Parse {
        layer: Option<usize>,
        message: String,
    },

    #[error("invalid profile{}: {message}", layer_suffix(.layer))]
    ProfileValidation {
        layer: Option<usize>,
        message: String,
    },

    #[error("cut {cut} outside 0..={layers}")]
    CutOutOfRange { cut: usize, layers: usize },

    #[error("inverted layer range {from}..={to}")]
    InvertedRange { from: usize, to: usize },

    #[error("local queue unstable: service rate {service_rate} <= arrival rate {arrival_rate}")]
    Unstable {
        arrival_rate: f64,
        service_rate: f64,
    },

    #[error("positive payload with zero bandwidth share")]
    InfeasibleTransmission,

    #[error("positive edge work with zero edge frequency")]
    ZeroEdgeFrequency,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("allocation violates resource constraints: {0}")]
    Allocation(String),

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("length mismatch: expected {expected}, got {actual}")]
    Misaligned { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

fn layer_suffix(layer: &Option<usize>) -> String {
    match layer {
        Some(i) => format!(" at layer {i}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
