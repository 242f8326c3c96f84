//! Random aggregate queries over whatever a snapshot currently holds.

use rand::seq::SliceRandom;
use rand::Rng;
use rtdw_core::model::{Aggregator, SchemaDef};
use rtdw_core::query::{Field, Freshness, Predicate, QuerySpec};
use rtdw_core::storage::Snapshot;
use rtdw_core::{Timestamp, Value};

const AGGREGATORS: [Aggregator; 5] =
    [Aggregator::Sum, Aggregator::Count, Aggregator::Min, Aggregator::Max, Aggregator::Avg];
const FRESHNESS: [Freshness; 3] = [Freshness::RealTime, Freshness::NearRealTime, Freshness::AsOfHistorical];

/// Draws queries whose literals come from live dimension members, so
/// filters select something most of the time.
pub struct QueryGenerator<'a> {
    schema: &'a SchemaDef,
}

impl<'a> QueryGenerator<'a> {
    pub fn new(schema: &'a SchemaDef) -> Self {
        QueryGenerator { schema }
    }

    /// One query over a random fact table. Event-time filters fall inside
    /// `0..=horizon`.
    pub fn query(&self, rng: &mut impl Rng, snapshot: &Snapshot, horizon: Timestamp) -> QuerySpec {
        let fact = self.schema.fact_tables.choose(rng).expect("schema has fact tables");
        let mut spec = QuerySpec::new(&fact.name);
        for _ in 0..rng.gen_range(1..=3) {
            if rng.gen_bool(0.2) {
                spec = spec.aggregate(Aggregator::Count, "*");
            } else {
                let m = fact.measures.choose(rng).expect("fact has measures");
                spec = spec.aggregate(*AGGREGATORS.choose(rng).unwrap(), &m.name);
            }
        }
        if rng.gen_bool(0.5) {
            let lo = rng.gen_range(0..=horizon.max(0));
            let hi = lo + rng.gen_range(0..=horizon.max(1) / 2);
            spec = spec.filter(
                Field::EventTime,
                match rng.gen_range(0..3) {
                    0 => Predicate::Between(Value::Integer(lo), Value::Integer(hi)),
                    1 => Predicate::Ge(Value::Integer(lo)),
                    _ => Predicate::Lt(Value::Integer(hi)),
                },
            );
        }
        let attrs: Vec<(String, String)> = fact
            .grain
            .iter()
            .filter_map(|d| self.schema.dimension(d))
            .flat_map(|d| d.attributes.iter().map(move |a| (d.name.clone(), a.name.clone())))
            .collect();
        if rng.gen_bool(0.4) {
            let (dim, attr) = attrs.choose(rng).expect("grain has attributes").clone();
            let pool = literals(snapshot, &dim, &attr);
            if let Some(v) = pool.choose(rng).cloned() {
                let p = if rng.gen_bool(0.7) {
                    Predicate::Eq(v)
                } else {
                    let mut set: Vec<Value> = pool.choose_multiple(rng, 2).cloned().collect();
                    set.push(v);
                    Predicate::In(set)
                };
                spec = spec.filter(Field::attr(dim, attr), p);
            }
        }
        for _ in 0..rng.gen_range(0..=2) {
            if rng.gen_bool(0.1) {
                spec = spec.group(Field::EventTime);
            } else {
                let (dim, attr) = attrs.choose(rng).unwrap().clone();
                let f = Field::attr(dim, attr);
                if !spec.group_by.contains(&f) {
                    spec = spec.group(f);
                }
            }
        }
        spec.freshness(*FRESHNESS.choose(rng).unwrap())
    }
}

fn literals(snapshot: &Snapshot, dim: &str, attr: &str) -> Vec<Value> {
    let Some(d) = snapshot.dimension(dim) else { return Vec::new() };
    let Some(i) = d.def().attributes.iter().position(|a| a.name == attr) else { return Vec::new() };
    let mut out: Vec<Value> = d.rows().iter().map(|m| m.attributes[i].clone()).collect();
    out.sort();
    out.dedup();
    out
}
