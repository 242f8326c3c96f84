//! Synthetic source streams. Every generator is deterministic in its seed
//! and plants an exact number of malformed records.

use std::collections::BTreeMap;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtdw_core::etl::{CleanRule, FieldMapping, SourceRecord};
use rtdw_core::model::SchemaDef;
use rtdw_core::{Fixed, ScalarKind, Timestamp, Value};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const TICKETING_SCHEMA: &str = include_str!("../scenarios/ticketing_schema.toml");
pub const STOCKS_SCHEMA: &str = include_str!("../scenarios/stocks_schema.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    /// Records per tick.
    pub rate: u32,
    /// Ticks `1..=duration` receive arrivals.
    pub duration: Timestamp,
    pub seed: u64,
    #[serde(default)]
    pub dirty_fraction: f64,
}

impl GenParams {
    pub fn new(rate: u32, duration: Timestamp, seed: u64) -> Self {
        GenParams { rate, duration, seed, dirty_fraction: 0.0 }
    }

    pub fn dirty(mut self, fraction: f64) -> Self {
        self.dirty_fraction = fraction;
        self
    }

    pub fn total(&self) -> usize {
        self.rate as usize * self.duration.max(0) as usize
    }

    /// `round(dirty_fraction * total)`.
    pub fn dirty_count(&self) -> usize {
        (self.dirty_fraction * self.total() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.rate == 0 || self.duration <= 0 {
            return Err(HarnessError::InvalidConfig(format!(
                "rate and duration must be positive (rate {}, duration {})",
                self.rate, self.duration
            )));
        }
        if !(0.0..=1.0).contains(&self.dirty_fraction) {
            return Err(HarnessError::InvalidConfig(format!(
                "dirty_fraction {} is outside [0, 1]",
                self.dirty_fraction
            )));
        }
        Ok(())
    }
}

/// A record and the tick it reaches the staging area. The record's
/// `extracted_at` equals `tick`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub tick: Timestamp,
    pub record: SourceRecord,
}

/// A dimension member change the generator schedules alongside its
/// records.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberEvent {
    pub dimension: String,
    pub natural_key: Value,
    pub attributes: Vec<(String, Value)>,
    pub at: Timestamp,
}

pub trait WorkloadGenerator: Send + Sync {
    fn name(&self) -> &str;
    fn schema(&self) -> SchemaDef;
    fn fact(&self) -> &str;
    fn mapping(&self) -> FieldMapping;
    /// Rules that reject exactly the planted malformed records.
    fn clean_rules(&self) -> Vec<CleanRule>;
    /// Member registrations and updates, ordered by `at`.
    fn members(&self, params: &GenParams) -> Vec<MemberEvent>;
    fn generate(&self, params: &GenParams) -> Result<Vec<Arrival>, HarnessError>;
}

#[derive(Clone)]
pub struct GeneratorRegistry {
    entries: BTreeMap<String, Arc<dyn WorkloadGenerator>>,
}

impl GeneratorRegistry {
    pub fn empty() -> Self {
        GeneratorRegistry { entries: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(Ticketing));
        r.register(Arc::new(Stocks));
        r
    }

    pub fn register(&mut self, generator: Arc<dyn WorkloadGenerator>) {
        self.entries.insert(generator.name().to_string(), generator);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn WorkloadGenerator>, HarnessError> {
        self.entries.get(name).cloned().ok_or_else(|| HarnessError::UnknownGenerator(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

impl Default for GeneratorRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Looks up `name` in the builtin registry and generates its stream.
pub fn generate_workload(name: &str, params: &GenParams) -> Result<Vec<Arrival>, HarnessError> {
    GeneratorRegistry::builtin().get(name)?.generate(params)
}

/// Lays out `rate * duration` arrivals, marks exactly `dirty_count` of
/// them, and lets `make` fill in each record.
fn stream(
    source: &str,
    params: &GenParams,
    mut make: impl FnMut(&mut ChaCha8Rng, Timestamp, bool) -> IndexMap<String, Value>,
) -> Result<Vec<Arrival>, HarnessError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.total();
    let mut dirty = vec![false; n];
    for i in sample(&mut rng, n, params.dirty_count()) {
        dirty[i] = true;
    }
    let mut out = Vec::with_capacity(n);
    for (i, bad) in dirty.into_iter().enumerate() {
        let tick = 1 + (i / params.rate as usize) as Timestamp;
        let fields = make(&mut rng, tick, bad);
        out.push(Arrival { tick, record: SourceRecord::new(source, fields, tick) });
    }
    Ok(out)
}

/// Event time trails arrival by up to two ticks.
fn event_time(rng: &mut impl Rng, tick: Timestamp) -> Timestamp {
    (tick - rng.gen_range(0..=2)).max(0)
}

const AIRPORTS: [&str; 5] = ["LHE", "KHI", "ISB", "PEW", "MUX"];
const WEEKDAYS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];
const FLIGHTS: usize = 12;

/// Ticket sales across a dozen flights. Halfway through the run one flight
/// changes aircraft, which versions its dimension row.
pub struct Ticketing;

impl WorkloadGenerator for Ticketing {
    fn name(&self) -> &str {
        "ticketing"
    }

    fn schema(&self) -> SchemaDef {
        SchemaDef::from_toml_str(TICKETING_SCHEMA).expect("bundled ticketing schema parses")
    }

    fn fact(&self) -> &str {
        "ticket_sales"
    }

    fn mapping(&self) -> FieldMapping {
        FieldMapping::new("ticket_sales", "sold_at")
            .key("flight", "flight_no")
            .key("date", "day")
            .measure("fare", "fare")
            .measure("seats", "seats")
    }

    fn clean_rules(&self) -> Vec<CleanRule> {
        vec![CleanRule::not_null("fare"), CleanRule::type_conforms("fare", ScalarKind::Decimal)]
    }

    fn members(&self, params: &GenParams) -> Vec<MemberEvent> {
        let mut out = Vec::new();
        for i in 0..FLIGHTS {
            out.push(MemberEvent {
                dimension: "flight".into(),
                natural_key: Value::text(format!("PK{}", 300 + i)),
                attributes: vec![
                    ("origin".into(), Value::text(AIRPORTS[i % 5])),
                    ("destination".into(), Value::text(AIRPORTS[(i + 2) % 5])),
                    ("aircraft".into(), Value::text(if i % 3 == 0 { "B737" } else { "A320" })),
                ],
                at: 0,
            });
        }
        let days = params.duration.div_euclid(rtdw_core::value::TICKS_PER_DAY) + 1;
        for d in 0..days {
            out.push(MemberEvent {
                dimension: "date".into(),
                natural_key: Value::Integer(d),
                attributes: vec![("weekday".into(), Value::text(WEEKDAYS[d as usize % 7]))],
                at: 0,
            });
        }
        out.push(MemberEvent {
            dimension: "flight".into(),
            natural_key: Value::text("PK301"),
            attributes: vec![("aircraft".into(), Value::text("A330"))],
            at: params.duration / 2,
        });
        out
    }

    fn generate(&self, params: &GenParams) -> Result<Vec<Arrival>, HarnessError> {
        stream(self.name(), params, |rng, tick, bad| {
            let et = event_time(rng, tick);
            let flight = format!("PK{}", 300 + rng.gen_range(0..FLIGHTS));
            let fare = Fixed::from_units(rng.gen_range(50_0000..900_0000));
            let mut f = IndexMap::new();
            f.insert("flight_no".into(), Value::text(flight));
            f.insert("day".into(), Value::Integer(et.div_euclid(rtdw_core::value::TICKS_PER_DAY)));
            f.insert("fare".into(), if bad { Value::text("n/a") } else { Value::text(fare.to_string()) });
            f.insert("seats".into(), Value::Integer(rng.gen_range(1..=4)));
            f.insert("sold_at".into(), Value::Integer(et));
            f
        })
    }
}

const TICKERS: [(&str, &str); 8] = [
    ("OGDC", "energy"),
    ("PPL", "energy"),
    ("HBL", "banking"),
    ("UBL", "banking"),
    ("LUCK", "cement"),
    ("DGKC", "cement"),
    ("ENGRO", "fertilizer"),
    ("FFC", "fertilizer"),
];

/// Trades over eight tickers whose prices follow independent random walks.
/// Halfway through, one ticker is reclassified in place.
pub struct Stocks;

impl WorkloadGenerator for Stocks {
    fn name(&self) -> &str {
        "stocks"
    }

    fn schema(&self) -> SchemaDef {
        SchemaDef::from_toml_str(STOCKS_SCHEMA).expect("bundled stocks schema parses")
    }

    fn fact(&self) -> &str {
        "trades"
    }

    fn mapping(&self) -> FieldMapping {
        FieldMapping::new("trades", "ts").key("symbol", "ticker").measure("price", "price").measure("volume", "volume")
    }

    fn clean_rules(&self) -> Vec<CleanRule> {
        vec![CleanRule::not_null("price"), CleanRule::type_conforms("price", ScalarKind::Decimal)]
    }

    fn members(&self, params: &GenParams) -> Vec<MemberEvent> {
        let mut out: Vec<MemberEvent> = TICKERS
            .iter()
            .enumerate()
            .map(|(i, (t, sector))| MemberEvent {
                dimension: "symbol".into(),
                natural_key: Value::text(t),
                attributes: vec![
                    ("sector".into(), Value::text(sector)),
                    ("exchange".into(), Value::text(if i % 2 == 0 { "PSX" } else { "LSE" })),
                ],
                at: 0,
            })
            .collect();
        out.push(MemberEvent {
            dimension: "symbol".into(),
            natural_key: Value::text("ENGRO"),
            attributes: vec![("sector".into(), Value::text("conglomerate"))],
            at: params.duration / 2,
        });
        out
    }

    fn generate(&self, params: &GenParams) -> Result<Vec<Arrival>, HarnessError> {
        let mut prices: Vec<i64> = (0..TICKERS.len()).map(|i| 100_0000 + 25_0000 * i as i64).collect();
        stream(self.name(), params, move |rng, tick, bad| {
            let et = event_time(rng, tick);
            let s = rng.gen_range(0..TICKERS.len());
            prices[s] = (prices[s] + rng.gen_range(-5000..=5000)).max(1_0000);
            let mut f = IndexMap::new();
            f.insert("ticker".into(), Value::text(TICKERS[s].0));
            f.insert("price".into(), if bad { Value::Null } else { Value::Decimal(Fixed::from_units(prices[s])) });
            f.insert("volume".into(), Value::Integer(rng.gen_range(1..=1000)));
            f.insert("ts".into(), Value::Integer(et));
            f
        })
    }
}

/// One JSON object per record, readable by the JSON-lines source.
pub fn write_records(out: &mut impl std::io::Write, arrivals: &[Arrival]) -> std::io::Result<()> {
    for a in arrivals {
        serde_json::to_writer(&mut *out, &a.record.fields)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
