use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::value::ScalarKind;

/// Engine-managed attributes carried by every versioned dimension row.
pub const SYSTEM_ATTRIBUTES: [&str; 4] = ["surrogate_key", "valid_from", "valid_to", "is_current"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub kind: ScalarKind,
}

impl AttributeDef {
    pub fn new(name: impl Into<String>, kind: ScalarKind) -> Self {
        AttributeDef { name: name.into(), kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScdPolicy {
    /// Type 1: attributes replaced in place.
    Overwrite,
    /// Type 2: every change closes the current row and opens a new version.
    Versioned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionDef {
    pub name: String,
    pub attributes: Vec<AttributeDef>,
    pub natural_key: String,
    pub scd_policy: ScdPolicy,
    #[serde(default)]
    pub conformed: bool,
}

impl DimensionDef {
    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn natural_key_index(&self) -> Option<usize> {
        self.attribute_index(&self.natural_key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Sum,
    Count,
    Min,
    Max,
    Avg,
}

impl Aggregator {
    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Sum => "SUM",
            Aggregator::Count => "COUNT",
            Aggregator::Min => "MIN",
            Aggregator::Max => "MAX",
            Aggregator::Avg => "AVG",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SUM" => Some(Aggregator::Sum),
            "COUNT" => Some(Aggregator::Count),
            "MIN" => Some(Aggregator::Min),
            "MAX" => Some(Aggregator::Max),
            "AVG" => Some(Aggregator::Avg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureDef {
    pub name: String,
    /// Default aggregator for reports; queries may request any aggregator.
    pub aggregator: Aggregator,
    /// Stored pre-calculation derived from input fields by `formula`.
    #[serde(default)]
    pub precomputed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula: Option<String>,
}

impl MeasureDef {
    pub fn raw(name: impl Into<String>, aggregator: Aggregator) -> Self {
        MeasureDef { name: name.into(), aggregator, precomputed: false, formula: None }
    }

    pub fn derived(name: impl Into<String>, aggregator: Aggregator, formula: impl Into<String>) -> Self {
        MeasureDef { name: name.into(), aggregator, precomputed: true, formula: Some(formula.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactTableDef {
    pub name: String,
    /// Dimension names identifying one fact row, in key order.
    pub grain: Vec<String>,
    pub measures: Vec<MeasureDef>,
    /// Retention window for historical data.
    pub duration_days: i64,
}

impl FactTableDef {
    pub fn measure_index(&self, name: &str) -> Option<usize> {
        self.measures.iter().position(|m| m.name == name)
    }

    pub fn grain_index(&self, dimension: &str) -> Option<usize> {
        self.grain.iter().position(|d| d == dimension)
    }
}

/// A star schema: dimensions, fact tables and the query priority order.
///
/// The on-disk form is TOML:
///
/// ```toml
/// query_priorities = ["bookings"]
///
/// [[dimensions]]
/// name = "flight"
/// natural_key = "flight_no"
/// scd_policy = "overwrite"     # or "versioned"
/// conformed = false
/// attributes = [
///   { name = "flight_no", kind = "text" },
///   { name = "origin", kind = "text" },
/// ]
///
/// [[fact_tables]]
/// name = "bookings"
/// grain = ["flight"]
/// duration_days = 365
/// measures = [
///   { name = "fare", aggregator = "sum" },
///   { name = "seats", aggregator = "sum" },
///   { name = "revenue", aggregator = "sum", precomputed = true, formula = "fare * seats" },
/// ]
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SchemaDef {
    #[serde(default)]
    pub query_priorities: Vec<String>,
    #[serde(default)]
    pub dimensions: Vec<DimensionDef>,
    #[serde(default)]
    pub fact_tables: Vec<FactTableDef>,
}

impl SchemaDef {
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        toml::from_str(text).map_err(|e| ModelError::SchemaParse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::SchemaFile { path: path.display().to_string(), reason: e.to_string() })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("schema serializes to TOML")
    }

    pub fn dimension(&self, name: &str) -> Option<&DimensionDef> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    pub fn dimension_index(&self, name: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.name == name)
    }

    pub fn fact(&self, name: &str) -> Option<&FactTableDef> {
        self.fact_tables.iter().find(|f| f.name == name)
    }

    pub fn fact_index(&self, name: &str) -> Option<usize> {
        self.fact_tables.iter().position(|f| f.name == name)
    }

    /// Admission priority of a fact table; lower is served first. Facts
    /// missing from `query_priorities` rank after every listed one.
    pub fn priority_of(&self, fact: &str) -> usize {
        self.query_priorities.iter().position(|f| f == fact).unwrap_or(self.query_priorities.len())
    }
}
