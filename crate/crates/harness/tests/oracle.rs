use std::sync::Arc;

use rtdw_core::model::{Aggregator, SchemaDef, SurrogateKey};
use rtdw_core::query::{Field, Predicate, QueryEngine, QuerySpec};
use rtdw_core::storage::{FactRow, Warehouse, WarehouseConfig};
use rtdw_core::{Fixed, SimClock, Value};
use rtdw_harness::oracle::{Expected, NaiveOracle};
use rtdw_harness::{oracle_aggregate, Oracle};

const SCHEMA: &str = r#"
[[dimensions]]
name = "shop"
natural_key = "code"
scd_policy = "overwrite"
attributes = [{ name = "code", kind = "text" }, { name = "city", kind = "text" }]

[[fact_tables]]
name = "sales"
grain = ["shop"]
duration_days = 365
measures = [{ name = "amount", aggregator = "sum" }]
"#;

fn warehouse(amounts: &[i64]) -> Arc<Warehouse> {
    let wh = Warehouse::new(
        SchemaDef::from_toml_str(SCHEMA).unwrap(),
        WarehouseConfig::default(),
        Arc::new(SimClock::new(0)),
    )
    .unwrap();
    for (code, city) in [("a", "x"), ("b", "y")] {
        wh.upsert_member("shop", Value::text(code), vec![("city".into(), Value::text(city))], 0).unwrap();
    }
    let rows = amounts
        .iter()
        .enumerate()
        .map(|(i, &a)| FactRow::new(vec![SurrogateKey(1 + i as u64 % 2)], vec![Fixed::from_int(a)], i as i64))
        .collect();
    wh.load_batch_segment("sales", rows).unwrap();
    Arc::new(wh)
}

fn scalar(wh: &Warehouse, agg: Aggregator) -> Option<Expected> {
    let spec = QuerySpec::new("sales").aggregate(agg, "amount");
    let snap = wh.open_snapshot();
    let rows: Vec<FactRow> = snap.table("sales").unwrap().historical_rows().cloned().collect();
    let ans = oracle_aggregate(&snap, &rows, &spec).unwrap();
    ans.groups.get(&Vec::new()).map(|v| v[0].clone())
}

#[test]
fn sum_of_one_two_three() {
    assert_eq!(scalar(&warehouse(&[1, 2, 3]), Aggregator::Sum), Some(Expected::Exact(6 * Fixed::SCALE as i128)));
}

#[test]
fn empty_set_has_no_groups() {
    let wh = warehouse(&[]);
    assert_eq!(scalar(&wh, Aggregator::Sum), None);
    assert_eq!(scalar(&wh, Aggregator::Count), None);
}

#[test]
fn average_of_two_and_four() {
    assert_eq!(scalar(&warehouse(&[2, 4]), Aggregator::Avg), Some(Expected::Mean(3.0)));
}

#[test]
fn grouped_filtered_answer_matches_engine() {
    let wh = warehouse(&[5, 7, 11, 13, 17]);
    let spec = QuerySpec::new("sales")
        .aggregate(Aggregator::Sum, "amount")
        .aggregate(Aggregator::Count, "*")
        .aggregate(Aggregator::Max, "amount")
        .filter(Field::EventTime, Predicate::Ge(Value::Integer(1)))
        .group(Field::attr("shop", "city"));
    let snap = wh.open_snapshot();
    let want = NaiveOracle.answer(&snap, &spec).unwrap();
    let x = &want.groups[&vec![Value::text("x")]];
    assert_eq!(
        x,
        &vec![
            Expected::Exact(28 * Fixed::SCALE as i128),
            Expected::Count(2),
            Expected::Exact(17 * Fixed::SCALE as i128)
        ]
    );
    let got = QueryEngine::new(wh.clone()).execute(&spec).unwrap();
    assert_eq!(want.diff(&got), None);
}

#[test]
fn diff_reports_disagreement() {
    let wh = warehouse(&[1, 2, 3]);
    let spec = QuerySpec::new("sales").aggregate(Aggregator::Sum, "amount");
    let snap = wh.open_snapshot();
    let got = QueryEngine::new(wh.clone()).execute(&spec).unwrap();
    let rows: Vec<FactRow> = snap.table("sales").unwrap().historical_rows().take(2).cloned().collect();
    let wrong = oracle_aggregate(&snap, &rows, &spec).unwrap();
    assert!(wrong.diff(&got).is_some());
}
