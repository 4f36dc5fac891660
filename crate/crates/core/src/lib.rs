//! Core order book machinery: LOBSTER ingestion and cleaning, L3 replay,
//! the raw / order-flow / volume representations, return labels and the
//! on-disk tensor container.

pub mod book;
pub mod container;
pub mod error;
pub mod features;
pub mod ingest;
pub mod labels;

pub use error::{Error, Result};

/// Integer price in units of 10⁻⁴ dollars (LOBSTER convention).
pub type Price = i64;

/// Share quantity.
pub type Qty = u64;

/// Book side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    /// LOBSTER direction code: +1 buy side, −1 sell side.
    pub fn from_direction(d: i8) -> Option<Side> {
        match d {
            1 => Some(Side::Bid),
            -1 => Some(Side::Ask),
            _ => None,
        }
    }

    pub fn direction(self) -> i8 {
        match self {
            Side::Bid => 1,
            Side::Ask => -1,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }
}
