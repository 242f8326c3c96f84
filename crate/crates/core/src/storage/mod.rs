//! Storage engine: sealed historical segments, the real-time partition,
//! staging tables for trickle-and-flip, the external real-time data cache,
//! snapshot isolation and the write-ahead log.

mod gate;
mod row;
pub mod wal;
mod warehouse;

pub use row::{FactRow, RowShape, Segment, SegmentId, SegmentOrigin};
pub use wal::{MemberChange, OpCode, WalError};
pub use warehouse::{
    Admission, BatchCommit, CacheLease, CommitNotice, FlipReport, Snapshot, Stores, TableSnapshot, WalConfig,
    Warehouse, WarehouseConfig,
};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, Violation};

/// Monotonic version number; every committed mutation produces the next one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Epoch(pub u64);

impl Epoch {
    pub fn next(self) -> Epoch {
        Epoch(self.0 + 1)
    }
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("unknown fact table `{0}`")]
    UnknownFact(String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("row shape for `{fact}` must be {expected:?} (keys, measures), got {found:?}")]
    SchemaMismatch { fact: String, expected: (usize, usize), found: (usize, usize) },
    #[error("no staging cycle open for `{0}`")]
    NoActiveStagingCycle(String),
    #[error("cache for `{fact}` is full: capacity {capacity}, requested {requested}, free {free}")]
    CacheOverflow { fact: String, capacity: usize, requested: usize, free: usize },
    #[error("no external cache configured for `{0}`")]
    NoCache(String),
    #[error("schema is invalid ({} violations)", .0.len())]
    InvalidSchema(Vec<Violation>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Wal(#[from] WalError),
}
