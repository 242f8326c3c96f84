#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtdw_core::model::{SchemaDef, SurrogateKey};
use rtdw_core::storage::{FactRow, Warehouse, WarehouseConfig};
use rtdw_core::{Fixed, SimClock, Value};

pub const SCHEMA: &str = r#"
query_priorities = ["bookings", "checkins"]

[[dimensions]]
name = "flight"
natural_key = "flight_no"
scd_policy = "versioned"
conformed = true
attributes = [
  { name = "flight_no", kind = "text" },
  { name = "origin", kind = "text" },
  { name = "capacity", kind = "integer" },
]

[[dimensions]]
name = "customer"
natural_key = "code"
scd_policy = "overwrite"
attributes = [
  { name = "code", kind = "text" },
  { name = "tier", kind = "text" },
]

[[fact_tables]]
name = "bookings"
grain = ["flight", "customer"]
duration_days = 30
measures = [
  { name = "fare", aggregator = "sum" },
  { name = "seats", aggregator = "sum" },
  { name = "revenue", aggregator = "sum", precomputed = true, formula = "fare * seats" },
]

[[fact_tables]]
name = "checkins"
grain = ["flight"]
duration_days = 7
measures = [{ name = "bags", aggregator = "sum" }]
"#;

pub const ORIGINS: [&str; 3] = ["LHE", "KHI", "ISB"];
pub const TIERS: [&str; 2] = ["gold", "basic"];

pub fn schema() -> SchemaDef {
    SchemaDef::from_toml_str(SCHEMA).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Warehouse with 6 flights and 4 customers registered at t=0.
pub fn warehouse(config: WarehouseConfig) -> (Arc<Warehouse>, Arc<SimClock>) {
    let clock = Arc::new(SimClock::new(0));
    let wh = Warehouse::new(schema(), config, clock.clone()).unwrap();
    seed_members(&wh);
    (Arc::new(wh), clock)
}

pub fn seed_members(wh: &Warehouse) {
    for i in 0..6 {
        wh.upsert_member(
            "flight",
            Value::text(format!("PK{i}")),
            vec![
                ("origin".into(), Value::text(ORIGINS[i % 3])),
                ("capacity".into(), Value::Integer(100 + 50 * (i as i64 % 2))),
            ],
            0,
        )
        .unwrap();
    }
    for i in 0..4 {
        wh.upsert_member("customer", Value::text(format!("C{i}")), vec![("tier".into(), Value::text(TIERS[i % 2]))], 0)
            .unwrap();
    }
}

pub fn booking(rng: &mut impl Rng, t: i64) -> FactRow {
    let fare = Fixed::from_units(rng.gen_range(-5_000..2_000_000));
    let seats = Fixed::from_int(rng.gen_range(1..5));
    let revenue = Fixed::from_f64(fare.to_f64() * seats.to_f64()).unwrap();
    FactRow::new(
        vec![SurrogateKey(rng.gen_range(1..=6)), SurrogateKey(rng.gen_range(1..=4))],
        vec![fare, seats, revenue],
        t,
    )
}

/// Spreads `n` bookings over historical segments, the real-time partition
/// and (when configured) the cache. Event times fall in `0..horizon`.
pub fn populate(wh: &Warehouse, clock: &SimClock, rng: &mut impl Rng, n: usize, horizon: i64) {
    let mut batch = Vec::new();
    for i in 0..n {
        clock.set(i as i64);
        let t = rng.gen_range(0..horizon);
        let row = booking(rng, t);
        match rng.gen_range(0..3) {
            0 => {
                batch.push(row);
                if batch.len() >= 16 {
                    wh.load_batch_segment("bookings", std::mem::take(&mut batch)).unwrap();
                }
            }
            1 => {
                wh.trickle_insert("bookings", row).unwrap();
            }
            _ if wh.has_cache("bookings") && wh.cache_free("bookings") > 0 => {
                wh.cache_insert("bookings", row).unwrap();
            }
            _ => {
                wh.trickle_insert("bookings", row).unwrap();
            }
        }
    }
    wh.load_batch_segment("bookings", batch).unwrap();
}
