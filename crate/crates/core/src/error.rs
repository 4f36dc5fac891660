use std::path::PathBuf;

use thiserror::Error;

use crate::Side;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("row count mismatch: {messages} message rows vs {snapshots} orderbook rows")]
    RowCountMismatch { messages: usize, snapshots: usize },

    #[error("timestamps not monotone at row {row}")]
    NonMonotoneTime { row: usize },

    #[error("inputs not aligned: {0}")]
    Misaligned(String),

    #[error("unknown order {order_id} on {side:?} at price {price} (event {event})")]
    UnknownOrder { event: usize, order_id: u64, side: Side, price: i64 },

    #[error("duplicate order id {order_id} (event {event})")]
    DuplicateOrder { event: usize, order_id: u64 },

    #[error("event {event}: size {requested} exceeds remaining {remaining} for order {order_id}")]
    SizeExceeded { event: usize, order_id: u64, requested: u64, remaining: u64 },

    #[error("price {price} is not a multiple of tick {tick}")]
    OffGrid { price: i64, tick: i64 },

    #[error("one-sided book")]
    OneSided,

    #[error("insufficient history: need {needed} events before anchor, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("container format: {0}")]
    Container(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
