//! Resolution of a spec against a snapshot into dense per-member lookup
//! tables, and the scan loop that feeds partial aggregates.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use super::aggregate::{Acc, Partials};
use super::{Field, Predicate, QueryError, QuerySpec};
use crate::model::{Aggregator, FactTableDef, SchemaDef, SurrogateKey};
use crate::storage::{FactRow, Snapshot, Stores};
use crate::value::{Fixed, ScalarKind, Timestamp, Value};

/// Column positions of the fact table a query touches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Projection {
    pub fact: usize,
    /// Grain positions, ascending.
    pub keys: Vec<usize>,
    /// Measure positions, ascending.
    pub measures: Vec<usize>,
}

fn grain_position(
    def: &FactTableDef,
    schema: &SchemaDef,
    dimension: &str,
    attribute: &str,
) -> Result<(usize, usize, usize), QueryError> {
    let unknown = || QueryError::UnknownAttribute(format!("{dimension}.{attribute}"));
    let pos = def.grain_index(dimension).ok_or_else(unknown)?;
    let d = schema.dimension_index(dimension).ok_or_else(unknown)?;
    let a = schema.dimensions[d].attribute_index(attribute).ok_or_else(unknown)?;
    Ok((pos, d, a))
}

fn measure_position(def: &FactTableDef, measure: &str, agg: Aggregator) -> Result<Option<usize>, QueryError> {
    if measure == "*" {
        return if agg == Aggregator::Count { Ok(None) } else { Err(QueryError::UnknownMeasure("*".into())) };
    }
    def.measure_index(measure).map(Some).ok_or_else(|| QueryError::UnknownMeasure(measure.to_string()))
}

/// Checks names and literal kinds, and returns the columns the query needs.
pub(crate) fn resolve(spec: &QuerySpec, schema: &SchemaDef) -> Result<Projection, QueryError> {
    let fact = schema.fact_index(&spec.fact).ok_or_else(|| QueryError::UnknownFact(spec.fact.clone()))?;
    let def = &schema.fact_tables[fact];
    if spec.aggregates.is_empty() {
        return Err(QueryError::NoAggregates);
    }
    let mut keys = Vec::new();
    for field in spec.filters.iter().map(|f| &f.field).chain(&spec.group_by) {
        if let Field::Attribute { dimension, attribute } = field {
            keys.push(grain_position(def, schema, dimension, attribute)?.0);
        }
    }
    for flt in &spec.filters {
        for lit in flt.predicate.literals() {
            literal_for(&flt.field, lit, schema)?;
        }
    }
    let mut measures = Vec::new();
    for a in &spec.aggregates {
        if let Some(m) = measure_position(def, &a.measure, a.aggregator)? {
            measures.push(m);
        }
    }
    keys.sort_unstable();
    keys.dedup();
    measures.sort_unstable();
    measures.dedup();
    Ok(Projection { fact, keys, measures })
}

/// Literal normalized for comparison against `field`.
fn literal_for(field: &Field, lit: &Value, schema: &SchemaDef) -> Result<Value, QueryError> {
    let mismatch = || QueryError::KindMismatch { field: field.to_string(), literal: lit.to_string() };
    if lit.is_null() {
        return Ok(Value::Null);
    }
    match field {
        Field::EventTime => match lit {
            Value::Integer(t) | Value::Timestamp(t) => Ok(Value::Timestamp(*t)),
            _ => Err(mismatch()),
        },
        Field::Attribute { dimension, attribute } => {
            let kind = schema
                .dimension(dimension)
                .and_then(|d| d.attribute_index(attribute).map(|a| d.attributes[a].kind))
                .ok_or_else(|| QueryError::UnknownAttribute(field.to_string()))?;
            let numeric = |k: ScalarKind| k != ScalarKind::Text;
            match lit.coerce(kind) {
                Some(v) => Ok(v),
                None if numeric(kind) && !matches!(lit, Value::Text(_)) => Ok(lit.clone()),
                None => Err(mismatch()),
            }
        }
    }
}

fn matches(pred: &Predicate, v: &Value) -> bool {
    let cmp = |lit: &Value| v.compare(lit);
    match pred {
        Predicate::Eq(l) => cmp(l) == Some(Ordering::Equal),
        Predicate::Lt(l) => cmp(l) == Some(Ordering::Less),
        Predicate::Le(l) => matches!(cmp(l), Some(Ordering::Less | Ordering::Equal)),
        Predicate::Gt(l) => cmp(l) == Some(Ordering::Greater),
        Predicate::Ge(l) => matches!(cmp(l), Some(Ordering::Greater | Ordering::Equal)),
        Predicate::Between(lo, hi) => {
            matches!(cmp(lo), Some(Ordering::Greater | Ordering::Equal))
                && matches!(cmp(hi), Some(Ordering::Less | Ordering::Equal))
        }
        Predicate::In(set) => set.iter().any(|l| cmp(l) == Some(Ordering::Equal)),
    }
}

/// Inclusive event-time bounds implied by the query's event-time filters,
/// plus any `IN` sets that further restrict it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct TimeFilter {
    pub lo: Timestamp,
    pub hi: Timestamp,
    pub sets: Vec<Vec<Timestamp>>,
}

impl TimeFilter {
    pub fn of(spec: &QuerySpec) -> TimeFilter {
        let mut tf = TimeFilter { lo: Timestamp::MIN, hi: Timestamp::MAX, sets: Vec::new() };
        let ts = |v: &Value| match v {
            Value::Integer(t) | Value::Timestamp(t) => Some(*t),
            _ => None,
        };
        for flt in spec.filters.iter().filter(|f| f.field == Field::EventTime) {
            let (lo, hi) = match &flt.predicate {
                Predicate::Eq(v) => ts(v).map_or((1, 0), |t| (t, t)),
                Predicate::Lt(v) => ts(v).and_then(|t| t.checked_sub(1)).map_or((1, 0), |t| (Timestamp::MIN, t)),
                Predicate::Le(v) => ts(v).map_or((1, 0), |t| (Timestamp::MIN, t)),
                Predicate::Gt(v) => ts(v).and_then(|t| t.checked_add(1)).map_or((1, 0), |t| (t, Timestamp::MAX)),
                Predicate::Ge(v) => ts(v).map_or((1, 0), |t| (t, Timestamp::MAX)),
                Predicate::Between(a, b) => match (ts(a), ts(b)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => (1, 0),
                },
                Predicate::In(set) => {
                    let mut s: Vec<Timestamp> = set.iter().filter_map(ts).collect();
                    s.sort_unstable();
                    s.dedup();
                    let range = match (s.first(), s.last()) {
                        (Some(&a), Some(&b)) => (a, b),
                        _ => (1, 0),
                    };
                    tf.sets.push(s);
                    range
                }
            };
            let empty = lo > hi;
            tf.lo = if empty { Timestamp::MAX } else { tf.lo.max(lo) };
            tf.hi = if empty { Timestamp::MIN } else { tf.hi.min(hi) };
        }
        tf
    }

    #[inline]
    fn admits(&self, t: Timestamp) -> bool {
        self.lo <= t && t <= self.hi && self.sets.iter().all(|s| s.binary_search(&t).is_ok())
    }
}

/// Access to the projected columns of a row, by fact position or by slot in
/// a [`Projection`].
pub(crate) trait RowRef {
    fn key(&self, pos: usize, slot: usize) -> SurrogateKey;
    fn measure(&self, pos: usize, slot: usize) -> Fixed;
    fn event_time(&self) -> Timestamp;
}

impl RowRef for FactRow {
    #[inline]
    fn key(&self, pos: usize, _: usize) -> SurrogateKey {
        self.dim_keys[pos]
    }

    #[inline]
    fn measure(&self, pos: usize, _: usize) -> Fixed {
        self.measures[pos]
    }

    #[inline]
    fn event_time(&self) -> Timestamp {
        self.event_time
    }
}

struct KeyFilter {
    pos: usize,
    slot: usize,
    // indexed by surrogate key - 1
    pass: Vec<bool>,
}

enum GroupCol {
    EventTime,
    Attr { pos: usize, slot: usize, codes: Vec<i64>, null_code: i64, values: Vec<Value> },
}

struct AggCol {
    measure: Option<(usize, usize)>,
    aggregator: Aggregator,
}

pub(crate) struct CompiledQuery {
    pub projection: Projection,
    pub stores: Stores,
    pub time: TimeFilter,
    key_filters: Vec<KeyFilter>,
    groups: Vec<GroupCol>,
    aggs: Vec<AggCol>,
    group_columns: Vec<String>,
    value_columns: Vec<String>,
}

impl CompiledQuery {
    pub fn new(spec: &QuerySpec, snapshot: &Snapshot) -> Result<CompiledQuery, QueryError> {
        let schema = snapshot.schema();
        let projection = resolve(spec, schema)?;
        let def = &schema.fact_tables[projection.fact];
        let slot = |pos: usize| projection.keys.binary_search(&pos).expect("projected key");
        let mslot = |pos: usize| projection.measures.binary_search(&pos).expect("projected measure");

        // attribute filters on the same grain position fold into one bitmap
        let mut per_pos: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
        for flt in &spec.filters {
            let Field::Attribute { dimension, attribute } = &flt.field else { continue };
            let (pos, d, a) = grain_position(def, schema, dimension, attribute)?;
            let mut pred = flt.predicate.clone();
            for lit in pred.literals_mut() {
                *lit = literal_for(&flt.field, lit, schema)?;
            }
            let dim = snapshot.dimension_at(d);
            let pass = per_pos.entry(pos).or_insert_with(|| vec![true; dim.len()]);
            for (i, m) in dim.rows().iter().enumerate() {
                pass[i] = pass[i] && matches(&pred, &m.attributes[a]);
            }
        }
        let key_filters = per_pos.into_iter().map(|(pos, pass)| KeyFilter { pos, slot: slot(pos), pass }).collect();

        let mut groups = Vec::new();
        let mut group_columns = Vec::new();
        for g in &spec.group_by {
            group_columns.push(g.to_string());
            match g {
                Field::EventTime => groups.push(GroupCol::EventTime),
                Field::Attribute { dimension, attribute } => {
                    let (pos, d, a) = grain_position(def, schema, dimension, attribute)?;
                    let dim = snapshot.dimension_at(d);
                    let mut ids: HashMap<&Value, i64> = HashMap::new();
                    let mut values = Vec::new();
                    let mut codes = Vec::with_capacity(dim.len());
                    for m in dim.rows() {
                        let v = &m.attributes[a];
                        let next = values.len() as i64;
                        let code = *ids.entry(v).or_insert_with(|| {
                            values.push(v.clone());
                            next
                        });
                        codes.push(code);
                    }
                    let null_code = match ids.get(&Value::Null) {
                        Some(&c) => c,
                        None => {
                            values.push(Value::Null);
                            values.len() as i64 - 1
                        }
                    };
                    groups.push(GroupCol::Attr { pos, slot: slot(pos), codes, null_code, values });
                }
            }
        }

        let mut aggs = Vec::new();
        let mut value_columns = Vec::new();
        for a in &spec.aggregates {
            value_columns.push(a.label());
            let measure = measure_position(def, &a.measure, a.aggregator)?.map(|p| (p, mslot(p)));
            aggs.push(AggCol { measure, aggregator: a.aggregator });
        }

        Ok(CompiledQuery {
            time: TimeFilter::of(spec),
            stores: spec.freshness.stores(),
            projection,
            key_filters,
            groups,
            aggs,
            group_columns,
            value_columns,
        })
    }

    #[inline]
    pub fn admits<R: RowRef>(&self, row: &R) -> bool {
        if !self.time.admits(row.event_time()) {
            return false;
        }
        self.key_filters.iter().all(|kf| {
            let sk = row.key(kf.pos, kf.slot).0;
            sk >= 1 && kf.pass.get(sk as usize - 1).copied().unwrap_or(false)
        })
    }

    /// Scans `rows`, folding matches into `out`. Returns rows scanned.
    pub fn accumulate<'r, R: RowRef + 'r>(&self, rows: impl Iterator<Item = &'r R>, out: &mut Partials) -> usize {
        let mut scanned = 0;
        let mut key: Vec<i64> = Vec::with_capacity(self.groups.len());
        for row in rows {
            scanned += 1;
            if !self.admits(row) {
                continue;
            }
            key.clear();
            for g in &self.groups {
                key.push(match g {
                    GroupCol::EventTime => row.event_time(),
                    GroupCol::Attr { pos, slot, codes, null_code, .. } => {
                        let sk = row.key(*pos, *slot).0;
                        if sk >= 1 {
                            codes.get(sk as usize - 1).copied().unwrap_or(*null_code)
                        } else {
                            *null_code
                        }
                    }
                });
            }
            let accs = match out.groups.get_mut(key.as_slice()) {
                Some(a) => a,
                None => out.groups.entry(key.clone()).or_insert_with(|| vec![Acc::default(); self.aggs.len()]),
            };
            for (acc, col) in accs.iter_mut().zip(&self.aggs) {
                match col.measure {
                    Some((pos, slot)) => acc.add(row.measure(pos, slot)),
                    None => acc.add_row(),
                }
            }
        }
        scanned
    }

    pub fn group_columns(&self) -> &[String] {
        &self.group_columns
    }

    pub fn value_columns(&self) -> &[String] {
        &self.value_columns
    }

    /// Decodes group codes into attribute values and finishes aggregates.
    pub fn finish(&self, partials: Partials) -> BTreeMap<Vec<Value>, Vec<super::AggregateValue>> {
        partials
            .groups
            .into_iter()
            .map(|(codes, accs)| {
                let key = codes
                    .iter()
                    .zip(&self.groups)
                    .map(|(&c, g)| match g {
                        GroupCol::EventTime => Value::Timestamp(c),
                        GroupCol::Attr { values, .. } => values[c as usize].clone(),
                    })
                    .collect();
                let vals = accs.iter().zip(&self.aggs).map(|(a, col)| a.finish(col.aggregator)).collect();
                (key, vals)
            })
            .collect()
    }
}
