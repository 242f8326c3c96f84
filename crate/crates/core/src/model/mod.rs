//! Star-schema definitions, validation and slowly changing dimensions.

mod dimension;
pub mod formula;
mod schema;
mod validate;

pub use dimension::{DimensionMember, DimensionState, SurrogateKey};
pub use schema::{
    Aggregator, AttributeDef, DimensionDef, FactTableDef, MeasureDef, ScdPolicy, SchemaDef, SYSTEM_ATTRIBUTES,
};
pub use validate::{validate_schema, ValidationReport, Violation};

use crate::value::{ScalarKind, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("dimension {dimension:?}: unknown member {key}")]
    UnknownMember { dimension: String, key: String },
    #[error("dimension {dimension:?}: no version of {key} covers t={as_of}")]
    NoVersionCovers { dimension: String, key: String, as_of: Timestamp },
    #[error("dimension {dimension:?}: update of {key} at t={at} precedes current version start {valid_from}")]
    TimestampRegression { dimension: String, key: String, at: Timestamp, valid_from: Timestamp },
    #[error("dimension {dimension:?}: natural key is null")]
    NullNaturalKey { dimension: String },
    #[error("dimension {dimension:?}: unknown attribute {attribute:?}")]
    UnknownAttribute { dimension: String, attribute: String },
    #[error("dimension {dimension:?}: attribute {attribute:?} expects {expected}")]
    KindMismatch { dimension: String, attribute: String, expected: ScalarKind },
    #[error("unknown dimension {0:?}")]
    UnknownDimension(String),
    #[error("cannot read schema file {path}: {reason}")]
    SchemaFile { path: String, reason: String },
    #[error("schema parse error: {0}")]
    SchemaParse(String),
}
