//! Aggregate queries over historical segments, the real-time partition and
//! the external cache, presented as one logical table.
//!
//! A [`QuerySpec`] is planned into a [`MergePlan`] whose route decides which
//! way data moves: `Direct` scans every store in place, `Jim` images the
//! filtered real-time slice next to historical data, `ReverseJim` copies the
//! filtered historical slice into cache scratch space. Every route produces
//! the same answer; only the cost differs.

mod aggregate;
mod compile;
mod engine;
mod parse;
mod plan;
mod route;

pub use aggregate::{AggregateValue, ResultMetadata, ResultSet};
pub use engine::{QueryEngine, ResultMemo};
pub use parse::parse_query;
pub use plan::{choose_route, plan, MergePlan, Route};
pub use route::{
    jim_analyze, jim_image, reverse_jim_load, CacheResident, MergeRoute, RequiredSlice, RouteContext, RouteOutput,
    RouteRegistry, SliceRow, TempTable,
};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::Aggregator;
use crate::storage::{StorageError, Stores};
use crate::value::Value;

/// How fresh an answer must be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Freshness {
    /// Historical segments only.
    AsOfHistorical,
    /// Historical segments and the real-time partition.
    NearRealTime,
    /// Everything, including the external cache.
    RealTime,
}

impl Freshness {
    pub fn stores(self) -> Stores {
        match self {
            Freshness::AsOfHistorical => Stores::HISTORICAL,
            Freshness::NearRealTime => Stores::WAREHOUSE,
            Freshness::RealTime => Stores::ALL,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Freshness::AsOfHistorical => "historical",
            Freshness::NearRealTime => "near_real_time",
            Freshness::RealTime => "real_time",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "historical" | "as_of_historical" | "asofhistorical" => Some(Freshness::AsOfHistorical),
            "near_real_time" | "nearrealtime" | "near_realtime" => Some(Freshness::NearRealTime),
            "real_time" | "realtime" => Some(Freshness::RealTime),
            _ => None,
        }
    }
}

/// A filterable or groupable column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    EventTime,
    Attribute { dimension: String, attribute: String },
}

impl Field {
    pub fn attr(dimension: impl Into<String>, attribute: impl Into<String>) -> Self {
        Field::Attribute { dimension: dimension.into(), attribute: attribute.into() }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::EventTime => f.write_str("event_time"),
            Field::Attribute { dimension, attribute } => write!(f, "{dimension}.{attribute}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Predicate {
    Eq(Value),
    Lt(Value),
    Le(Value),
    Gt(Value),
    Ge(Value),
    /// Inclusive on both ends.
    Between(Value, Value),
    In(Vec<Value>),
}

impl Predicate {
    pub fn literals(&self) -> Vec<&Value> {
        match self {
            Predicate::Eq(v) | Predicate::Lt(v) | Predicate::Le(v) | Predicate::Gt(v) | Predicate::Ge(v) => vec![v],
            Predicate::Between(a, b) => vec![a, b],
            Predicate::In(vs) => vs.iter().collect(),
        }
    }

    pub(crate) fn literals_mut(&mut self) -> Vec<&mut Value> {
        match self {
            Predicate::Eq(v) | Predicate::Lt(v) | Predicate::Le(v) | Predicate::Gt(v) | Predicate::Ge(v) => vec![v],
            Predicate::Between(a, b) => vec![a, b],
            Predicate::In(vs) => vs.iter_mut().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Filter {
    pub field: Field,
    pub predicate: Predicate,
}

impl Filter {
    pub fn new(field: Field, predicate: Predicate) -> Self {
        Filter { field, predicate }
    }
}

/// `measure` is `*` for a plain row count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggregateSpec {
    pub measure: String,
    pub aggregator: Aggregator,
}

impl AggregateSpec {
    pub fn new(aggregator: Aggregator, measure: impl Into<String>) -> Self {
        AggregateSpec { measure: measure.into(), aggregator }
    }

    pub fn label(&self) -> String {
        format!("{}({})", self.aggregator.name(), self.measure)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuerySpec {
    pub fact: String,
    pub filters: Vec<Filter>,
    pub group_by: Vec<Field>,
    pub aggregates: Vec<AggregateSpec>,
    pub freshness: Freshness,
}

impl QuerySpec {
    pub fn new(fact: impl Into<String>) -> Self {
        QuerySpec {
            fact: fact.into(),
            filters: Vec::new(),
            group_by: Vec::new(),
            aggregates: Vec::new(),
            freshness: Freshness::RealTime,
        }
    }

    pub fn aggregate(mut self, aggregator: Aggregator, measure: impl Into<String>) -> Self {
        self.aggregates.push(AggregateSpec::new(aggregator, measure));
        self
    }

    pub fn filter(mut self, field: Field, predicate: Predicate) -> Self {
        self.filters.push(Filter::new(field, predicate));
        self
    }

    pub fn group(mut self, field: Field) -> Self {
        self.group_by.push(field);
        self
    }

    pub fn freshness(mut self, freshness: Freshness) -> Self {
        self.freshness = freshness;
        self
    }

    /// True when the query yields at most one group with one value.
    pub fn is_scalar(&self) -> bool {
        self.group_by.is_empty() && self.aggregates.len() == 1
    }
}

fn fmt_literal(f: &mut fmt::Formatter<'_>, v: &Value) -> fmt::Result {
    match v {
        Value::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
        Value::Null => f.write_str("null"),
        other => write!(f, "{other}"),
    }
}

/// Renders the canonical text form accepted by [`parse_query`].
impl fmt::Display for QuerySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.aggregates.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(&a.label())?;
        }
        write!(f, " FROM {}", self.fact)?;
        if !self.group_by.is_empty() {
            f.write_str(" BY ")?;
            for (i, g) in self.group_by.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{g}")?;
            }
        }
        if !self.filters.is_empty() {
            f.write_str(" WHERE ")?;
            for (i, flt) in self.filters.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{} ", flt.field)?;
                match &flt.predicate {
                    Predicate::Eq(v) => {
                        f.write_str("= ")?;
                        fmt_literal(f, v)?;
                    }
                    Predicate::Lt(v) => {
                        f.write_str("< ")?;
                        fmt_literal(f, v)?;
                    }
                    Predicate::Le(v) => {
                        f.write_str("<= ")?;
                        fmt_literal(f, v)?;
                    }
                    Predicate::Gt(v) => {
                        f.write_str("> ")?;
                        fmt_literal(f, v)?;
                    }
                    Predicate::Ge(v) => {
                        f.write_str(">= ")?;
                        fmt_literal(f, v)?;
                    }
                    Predicate::Between(a, b) => {
                        f.write_str("BETWEEN ")?;
                        fmt_literal(f, a)?;
                        f.write_str(" AND ")?;
                        fmt_literal(f, b)?;
                    }
                    Predicate::In(vs) => {
                        f.write_str("IN (")?;
                        for (j, v) in vs.iter().enumerate() {
                            if j > 0 {
                                f.write_str(", ")?;
                            }
                            fmt_literal(f, v)?;
                        }
                        f.write_str(")")?;
                    }
                }
            }
        }
        write!(f, " FRESHNESS {}", self.freshness.keyword())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("unknown fact table `{0}`")]
    UnknownFact(String),
    #[error("unknown attribute `{0}` for this fact table")]
    UnknownAttribute(String),
    #[error("attribute `{0}` exists in several dimensions; qualify it as dimension.attribute")]
    AmbiguousAttribute(String),
    #[error("unknown measure `{0}`")]
    UnknownMeasure(String),
    #[error("literal {literal} does not fit `{field}`")]
    KindMismatch { field: String, literal: String },
    #[error("query has no aggregates")]
    NoAggregates,
    #[error("query names no fact table and the schema has {0}")]
    FactRequired(usize),
    #[error("parse error at {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("no merge route registered as `{0}`")]
    RouteUnavailable(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}
