use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch{}: {msg}", layer.as_ref().map(|l| format!(" in layer {l}")).unwrap_or_default())]
    Shape { layer: Option<String>, msg: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NnError {
    pub fn shape(msg: impl Into<String>) -> Self {
        NnError::Shape { layer: None, msg: msg.into() }
    }

    /// Attaches a layer name to a shape error that lacks one.
    pub fn at(self, name: &str) -> Self {
        match self {
            NnError::Shape { layer: None, msg } => NnError::Shape { layer: Some(name.to_string()), msg },
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NnError::Io { path: path.into(), source }
    }
}
