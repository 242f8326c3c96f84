use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::plan::Route;
use crate::model::Aggregator;
use crate::storage::Epoch;
use crate::value::{Fixed, Timestamp, Value};

/// Mergeable partial state of one aggregate. Sums are kept in fixed-point
/// units as `i128`, so totals are exact regardless of merge order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Acc {
    pub count: u64,
    pub sum: i128,
    pub min: i64,
    pub max: i64,
}

impl Default for Acc {
    fn default() -> Self {
        Acc { count: 0, sum: 0, min: i64::MAX, max: i64::MIN }
    }
}

impl Acc {
    #[inline]
    pub fn add(&mut self, v: Fixed) {
        let u = v.units();
        self.count += 1;
        self.sum += u as i128;
        self.min = self.min.min(u);
        self.max = self.max.max(u);
    }

    #[inline]
    pub fn add_row(&mut self) {
        self.count += 1;
    }

    #[cfg(test)]
    pub fn merge(&mut self, other: &Acc) {
        self.count += other.count;
        self.sum += other.sum;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    pub fn finish(&self, agg: Aggregator) -> AggregateValue {
        match agg {
            Aggregator::Count => AggregateValue::Count(self.count),
            _ if self.count == 0 => AggregateValue::Null,
            Aggregator::Sum => AggregateValue::Exact(self.sum),
            Aggregator::Min => AggregateValue::Exact(self.min as i128),
            Aggregator::Max => AggregateValue::Exact(self.max as i128),
            Aggregator::Avg => AggregateValue::Float(self.sum as f64 / Fixed::SCALE as f64 / self.count as f64),
        }
    }
}

/// Grouped partial aggregates from one or more scans.
#[derive(Debug, Clone, Default)]
pub(crate) struct Partials {
    /// Keyed by per-column group codes of the compiled query.
    pub groups: HashMap<Vec<i64>, Vec<Acc>>,
}

/// A finished aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AggregateValue {
    Count(u64),
    /// Exact fixed-point result (sum, min or max) in ten-thousandths.
    Exact(i128),
    /// Average: exact sum divided by count.
    Float(f64),
    /// Min, max, sum or average over zero rows.
    Null,
}

impl AggregateValue {
    pub fn to_f64(&self) -> Option<f64> {
        match *self {
            AggregateValue::Count(c) => Some(c as f64),
            AggregateValue::Exact(u) => Some(u as f64 / Fixed::SCALE as f64),
            AggregateValue::Float(f) => Some(f),
            AggregateValue::Null => None,
        }
    }

    /// Exact results that fit a [`Fixed`].
    pub fn as_fixed(&self) -> Option<Fixed> {
        match *self {
            AggregateValue::Exact(u) => i64::try_from(u).ok().map(Fixed::from_units),
            AggregateValue::Count(c) => i64::try_from(c).ok().map(Fixed::from_int),
            _ => None,
        }
    }
}

impl fmt::Display for AggregateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AggregateValue::Count(c) => write!(f, "{c}"),
            AggregateValue::Exact(u) => {
                let scale = Fixed::SCALE as i128;
                let sign = if u < 0 { "-" } else { "" };
                let (int, frac) = (u.abs() / scale, u.abs() % scale);
                if frac == 0 {
                    write!(f, "{sign}{int}")
                } else {
                    let s = format!("{frac:04}");
                    write!(f, "{sign}{int}.{}", s.trim_end_matches('0'))
                }
            }
            AggregateValue::Float(x) => write!(f, "{x}"),
            AggregateValue::Null => f.write_str("null"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMetadata {
    pub epoch: Epoch,
    pub route: Route,
    pub rows_scanned: usize,
    /// Newest load time among rows the query could see; `None` when its
    /// stores were empty.
    pub staleness_bound: Option<Timestamp>,
    /// Time spent waiting for admission (non-zero only around flips).
    #[serde(with = "duration_micros")]
    pub waited: Duration,
    pub memo_hit: bool,
}

mod duration_micros {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_micros() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_micros)
    }
}

/// Query answer. Groups are ordered by key; a query without `BY` has at
/// most one group, keyed by the empty vector, and none when no row matched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub group_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub groups: BTreeMap<Vec<Value>, Vec<AggregateValue>>,
    pub metadata: ResultMetadata,
}

impl ResultSet {
    /// The single value of a scalar query.
    pub fn scalar(&self) -> Option<&AggregateValue> {
        self.groups.get(&Vec::new()).and_then(|v| v.first())
    }

    /// Same columns, groups and values; metadata ignored.
    pub fn same_answer(&self, other: &ResultSet) -> bool {
        self.group_columns == other.group_columns
            && self.value_columns == other.value_columns
            && self.groups == other.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}
