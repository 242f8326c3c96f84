//! Extract, clean, transform and load.
//!
//! Sources yield [`SourceRecord`]s in order. [`clean`] rejects records that
//! fail any rule and reports the signal-to-noise ratio. [`transform`] keys
//! the survivors against dimension versions in effect at their event time
//! and diverts failures to dead letters. A [`LoadStrategy`] then moves fact
//! rows into storage on a tick schedule driven by [`run_loader`].

mod clean;
mod loader;
mod source;
mod strategy;
mod transform;

pub use clean::{clean, CleanReport, CleanRule, RuleKind, FRAMING_RULE};
pub use loader::{run_loader, Loader, LoaderStats, TimedRow};
pub use source::{extract, DelimitedSource, JsonLinesSource, MemorySource, Source, SourceItem};
pub use strategy::{LoadStrategy, StrategyKind, StrategyParams, StrategyRegistry};
pub use transform::{transform, write_dead_letters, DeadLetter, FieldMapping, TransformOutput};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::storage::StorageError;
use crate::value::{Timestamp, Value};

/// One raw record as extracted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub source_id: String,
    pub fields: IndexMap<String, Value>,
    pub extracted_at: Timestamp,
    /// Set when the input could not be split into fields; `fields` then
    /// holds the raw text under `_raw`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framing_error: Option<String>,
}

impl SourceRecord {
    pub fn new(source_id: impl Into<String>, fields: IndexMap<String, Value>, extracted_at: Timestamp) -> Self {
        SourceRecord { source_id: source_id.into(), fields, extracted_at, framing_error: None }
    }

    /// Field value, null when absent.
    pub fn get(&self, name: &str) -> &Value {
        const NULL: Value = Value::Null;
        self.fields.get(name).unwrap_or(&NULL)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EtlError {
    #[error("source {path} is unreadable: {reason}")]
    SourceUnreadable { path: String, reason: String },
    #[error("invalid clean rule `{rule}`: {reason}")]
    InvalidRule { rule: String, reason: String },
    #[error("invalid field mapping: {0}")]
    InvalidMapping(String),
    #[error("invalid load strategy: {0}")]
    InvalidStrategy(String),
    #[error("unknown load strategy `{0}`")]
    UnknownStrategy(String),
    #[error("dead-letter output: {0}")]
    DeadLetterOutput(#[from] std::io::Error),
    #[error(transparent)]
    Storage(#[from] StorageError),
}
