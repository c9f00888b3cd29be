use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scene sampling failed: {constraint}")]
    Sampling { constraint: String },

    #[error("infeasible acoustics: {0}")]
    InfeasibleAcoustics(String),

    #[error("covariance estimation error: {0}")]
    Estimation(String),

    #[error("mask validation error: {0}")]
    Validation(String),

    #[error("mask provider error: {0}")]
    Provider(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("node {node}, stage {stage}")]
    Node {
        node: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn at_node(self, node: usize, stage: &'static str) -> Error {
        Error::Node {
            node,
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
