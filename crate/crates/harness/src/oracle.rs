//! Ground truth for query answers. The naive oracle is a full scan written
//! without any of the engine's compilation, routing or accumulator code.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rtdw_core::model::Aggregator;
use rtdw_core::query::{AggregateValue, Field, Freshness, Predicate, QuerySpec, ResultSet};
use rtdw_core::storage::{FactRow, Snapshot, Stores};
use rtdw_core::{Fixed, Value};

use crate::HarnessError;

/// Expected value of one aggregate over a non-empty group.
#[derive(Debug, Clone, PartialEq)]
pub enum Expected {
    Count(u64),
    /// Sum, min or max in fixed-point units.
    Exact(i128),
    Mean(f64),
}

impl fmt::Display for Expected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expected::Count(c) => write!(f, "{c}"),
            Expected::Exact(u) => write!(f, "{}u", u),
            Expected::Mean(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleAnswer {
    pub groups: BTreeMap<Vec<Value>, Vec<Expected>>,
}

/// Relative tolerance for averages.
pub const AVG_TOLERANCE: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= AVG_TOLERANCE * a.abs().max(b.abs())
}

fn agrees(got: &AggregateValue, want: &Expected) -> bool {
    match (got, want) {
        (AggregateValue::Count(a), Expected::Count(b)) => a == b,
        (AggregateValue::Exact(a), Expected::Exact(b)) => a == b,
        (AggregateValue::Float(a), Expected::Mean(b)) => close(*a, *b),
        _ => false,
    }
}

impl OracleAnswer {
    /// `None` when `result` matches; otherwise a description of the first
    /// difference.
    pub fn diff(&self, result: &ResultSet) -> Option<String> {
        for (key, want) in &self.groups {
            let Some(got) = result.groups.get(key) else {
                return Some(format!("group {key:?} missing from result"));
            };
            if got.len() != want.len() {
                return Some(format!("group {key:?}: {} values, expected {}", got.len(), want.len()));
            }
            for (i, (g, w)) in got.iter().zip(want).enumerate() {
                if !agrees(g, w) {
                    return Some(format!("group {key:?} column {i}: got {g:?}, expected {w}"));
                }
            }
        }
        result
            .groups
            .keys()
            .find(|k| !self.groups.contains_key(*k))
            .map(|k| format!("unexpected group {k:?} in result"))
    }
}

pub trait Oracle: Send + Sync {
    fn name(&self) -> &str;
    fn answer(&self, snapshot: &Snapshot, spec: &QuerySpec) -> Result<OracleAnswer, HarnessError>;
}

fn visible(snapshot: &Snapshot, spec: &QuerySpec) -> Result<Vec<FactRow>, HarnessError> {
    let table = snapshot
        .table(&spec.fact)
        .ok_or_else(|| HarnessError::InvalidConfig(format!("unknown fact table `{}`", spec.fact)))?;
    let stores = match spec.freshness {
        Freshness::AsOfHistorical => Stores { historical: true, realtime: false, cache: false },
        Freshness::NearRealTime => Stores { historical: true, realtime: true, cache: false },
        Freshness::RealTime => Stores { historical: true, realtime: true, cache: true },
    };
    Ok(table.rows(stores).cloned().collect())
}

/// Naive full-scan aggregation of `rows` as seen through `snapshot`'s
/// dimensions.
pub fn oracle_aggregate(snapshot: &Snapshot, rows: &[FactRow], spec: &QuerySpec) -> Result<OracleAnswer, HarnessError> {
    let unknown = |what: &str| HarnessError::InvalidConfig(format!("oracle: unknown {what}"));
    let def = snapshot.schema().fact(&spec.fact).ok_or_else(|| unknown(&spec.fact))?;
    let lookup = |row: &FactRow, field: &Field| -> Result<Value, HarnessError> {
        match field {
            Field::EventTime => Ok(Value::Timestamp(row.event_time)),
            Field::Attribute { dimension, attribute } => {
                let pos = def.grain.iter().position(|g| g == dimension).ok_or_else(|| unknown(dimension))?;
                let dim = snapshot.dimension(dimension).ok_or_else(|| unknown(dimension))?;
                let col =
                    dim.def().attributes.iter().position(|a| &a.name == attribute).ok_or_else(|| unknown(attribute))?;
                let member = dim.member(row.dim_keys[pos]).ok_or_else(|| unknown("member"))?;
                Ok(member.attributes[col].clone())
            }
        }
    };
    let columns: Vec<Option<usize>> = spec
        .aggregates
        .iter()
        .map(|a| {
            if a.measure == "*" {
                Ok(None)
            } else {
                def.measures.iter().position(|m| m.name == a.measure).map(Some).ok_or_else(|| unknown(&a.measure))
            }
        })
        .collect::<Result<_, _>>()?;

    let mut buckets: BTreeMap<Vec<Value>, Vec<&FactRow>> = BTreeMap::new();
    'rows: for row in rows {
        for f in &spec.filters {
            if !holds(&lookup(row, &f.field)?, &f.predicate) {
                continue 'rows;
            }
        }
        let key = spec.group_by.iter().map(|g| lookup(row, g)).collect::<Result<Vec<_>, _>>()?;
        buckets.entry(key).or_default().push(row);
    }

    let mut groups = BTreeMap::new();
    for (key, members) in buckets {
        let values = spec
            .aggregates
            .iter()
            .zip(&columns)
            .map(|(a, col)| {
                let units: Vec<i64> = match col {
                    Some(c) => members.iter().map(|r| r.measures[*c].units()).collect(),
                    None => Vec::new(),
                };
                match a.aggregator {
                    Aggregator::Count => Expected::Count(members.len() as u64),
                    Aggregator::Sum => Expected::Exact(units.iter().map(|&u| u as i128).sum()),
                    Aggregator::Min => Expected::Exact(*units.iter().min().expect("non-empty group") as i128),
                    Aggregator::Max => Expected::Exact(*units.iter().max().expect("non-empty group") as i128),
                    Aggregator::Avg => {
                        let total: i128 = units.iter().map(|&u| u as i128).sum();
                        Expected::Mean(total as f64 / Fixed::SCALE as f64 / units.len() as f64)
                    }
                }
            })
            .collect();
        groups.insert(key, values);
    }
    Ok(OracleAnswer { groups })
}

fn holds(v: &Value, p: &Predicate) -> bool {
    let cmp = |l: &Value| v.compare(l);
    match p {
        Predicate::Eq(l) => cmp(l) == Some(Ordering::Equal),
        Predicate::Lt(l) => cmp(l) == Some(Ordering::Less),
        Predicate::Le(l) => cmp(l).is_some_and(Ordering::is_le),
        Predicate::Gt(l) => cmp(l) == Some(Ordering::Greater),
        Predicate::Ge(l) => cmp(l).is_some_and(Ordering::is_ge),
        Predicate::Between(lo, hi) => cmp(lo).is_some_and(Ordering::is_ge) && cmp(hi).is_some_and(Ordering::is_le),
        Predicate::In(set) => set.iter().any(|l| cmp(l) == Some(Ordering::Equal)),
    }
}

pub struct NaiveOracle;

impl Oracle for NaiveOracle {
    fn name(&self) -> &str {
        "naive"
    }

    fn answer(&self, snapshot: &Snapshot, spec: &QuerySpec) -> Result<OracleAnswer, HarnessError> {
        oracle_aggregate(snapshot, &visible(snapshot, spec)?, spec)
    }
}

/// Drops one visible row before aggregating. Used to check that the
/// harness notices a wrong oracle.
pub struct BrokenOracle;

impl Oracle for BrokenOracle {
    fn name(&self) -> &str {
        "broken"
    }

    fn answer(&self, snapshot: &Snapshot, spec: &QuerySpec) -> Result<OracleAnswer, HarnessError> {
        let mut rows = visible(snapshot, spec)?;
        rows.pop();
        oracle_aggregate(snapshot, &rows, spec)
    }
}

#[derive(Clone)]
pub struct OracleRegistry {
    entries: BTreeMap<String, Arc<dyn Oracle>>,
}

impl OracleRegistry {
    pub fn builtin() -> Self {
        let mut entries: BTreeMap<String, Arc<dyn Oracle>> = BTreeMap::new();
        entries.insert("naive".into(), Arc::new(NaiveOracle));
        entries.insert("broken".into(), Arc::new(BrokenOracle));
        OracleRegistry { entries }
    }

    pub fn register(&mut self, oracle: Arc<dyn Oracle>) {
        self.entries.insert(oracle.name().to_string(), oracle);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Oracle>, HarnessError> {
        self.entries.get(name).cloned().ok_or_else(|| HarnessError::UnknownOracle(name.to_string()))
    }
}

impl Default for OracleRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
