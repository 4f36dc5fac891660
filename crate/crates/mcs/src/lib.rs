//! Model Confidence Set: loss panels, block-bootstrap `T_max` equivalence
//! tests and sequential elimination with MCS p-values.

pub mod bootstrap;
pub mod panel;
pub mod procedure;

use std::path::PathBuf;

use thiserror::Error;

pub use bootstrap::{bootstrap_tmax, default_block_length, BootstrapConfig, Resamples, StageStats};
pub use panel::{window_losses, LossPanel};
pub use procedure::{mcs_run, McsResult};

pub type Result<T> = std::result::Result<T, McsError>;

#[derive(Debug, Error)]
pub enum McsError {
    #[error("degenerate panel: every model's relative loss has zero bootstrap variance")]
    DegeneratePanel,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
