//! Scenario files and the run loop that ties generators, loaders, queries
//! and alerts to one clock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtdw_core::alerting::{parse_rules, AlertEngine, AlertEvent, AlertRule, CollectorSink, CycleLadder, Trigger};
use rtdw_core::etl::{
    clean, extract, transform, CleanRule, DelimitedSource, FieldMapping, JsonLinesSource, LoadStrategy, Loader,
    LoaderStats, Source, SourceRecord, StrategyKind, StrategyRegistry, TimedRow,
};
use rtdw_core::model::SchemaDef;
use rtdw_core::query::{parse_query, QueryEngine, QueryError, QuerySpec, Route};
use rtdw_core::storage::{Snapshot, StorageError, Stores, Warehouse, WarehouseConfig};
use rtdw_core::{Clock, SimClock, Timestamp, WallClock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::generate::{Arrival, GenParams, GeneratorRegistry, MemberEvent};
use crate::oracle::{Oracle, OracleRegistry};
use crate::querygen::QueryGenerator;
use crate::report::{ClockMode, FactTotals, MeasureTotal, RunReport, SourceReport, StrategyReport};
use crate::HarnessError;

/// Cache rows given to a fact that needs a cache but has none configured.
pub const DEFAULT_CACHE_ROWS: usize = 1 << 20;
const MAX_EXAMPLES: usize = 5;
/// Keeps the query stream apart from generator streams on the same seed.
const QUERY_STREAM: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clock: ClockMode,
    /// Star schema file. Defaults to the union of the generators' schemas.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    /// Alert rule file, one rule per line.
    #[serde(default)]
    pub alerts: Option<PathBuf>,
    #[serde(default = "default_oracle")]
    pub oracle: String,
    #[serde(default = "default_ticks_per_minute")]
    pub ticks_per_minute: i64,
    #[serde(default)]
    pub ticks_per_day: Option<i64>,
    /// External cache capacity per fact table.
    #[serde(default)]
    pub cache: BTreeMap<String, usize>,
    /// Run at least this many ticks even when sources finish earlier.
    #[serde(default)]
    pub until: Option<Timestamp>,
    /// Query threads in wall-clock mode.
    #[serde(default = "default_readers")]
    pub readers: usize,
    pub sources: Vec<SourceConfig>,
    /// Each strategy gets a fresh warehouse and loads every fact.
    pub strategies: Vec<StrategyKind>,
    #[serde(default)]
    pub queries: QueryConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_oracle() -> String {
    "naive".into()
}

fn default_ticks_per_minute() -> i64 {
    60
}

fn default_readers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default)]
    pub generator: Option<String>,
    /// CSV or JSON-lines file, chosen by extension.
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Target fact for file sources.
    #[serde(default)]
    pub fact: Option<String>,
    #[serde(default)]
    pub mapping: Option<FieldMapping>,
    #[serde(default)]
    pub clean: Option<Vec<CleanRule>>,
    /// Records per tick.
    pub rate: u32,
    /// Generator ticks; ignored for files.
    #[serde(default)]
    pub duration: Option<Timestamp>,
    #[serde(default)]
    pub dirty_fraction: f64,
    /// Generator seed; defaults to the scenario seed plus the source index.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteChoice {
    Planned,
    Direct,
    Jim,
    ReverseJim,
}

impl RouteChoice {
    pub fn forced(self) -> Option<Route> {
        match self {
            RouteChoice::Planned => None,
            RouteChoice::Direct => Some(Route::Direct),
            RouteChoice::Jim => Some(Route::Jim),
            RouteChoice::ReverseJim => Some(Route::ReverseJim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedQuery {
    pub at: Timestamp,
    pub expr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryConfig {
    /// Checkpoint period in ticks; 0 disables periodic checkpoints.
    #[serde(default)]
    pub every: Timestamp,
    /// Random queries per checkpoint.
    #[serde(default)]
    pub random: usize,
    /// Routes each query runs under.
    #[serde(default = "default_routes")]
    pub routes: Vec<RouteChoice>,
    #[serde(default)]
    pub script: Vec<ScriptedQuery>,
    /// Random queries after the final flush.
    #[serde(default = "default_final_queries")]
    pub at_rest: usize,
}

fn default_routes() -> Vec<RouteChoice> {
    vec![RouteChoice::Planned]
}

fn default_final_queries() -> usize {
    10
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            every: 0,
            random: 0,
            routes: default_routes(),
            script: Vec::new(),
            at_rest: default_final_queries(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

struct PreparedSource {
    label: String,
    fact: String,
    mapping: FieldMapping,
    rules: Vec<CleanRule>,
    arrivals: Vec<Arrival>,
}

/// Everything resolved and validated before the first row is ingested.
struct Prepared {
    schema: SchemaDef,
    sources: Vec<PreparedSource>,
    members: Vec<MemberEvent>,
    rules: Vec<AlertRule>,
    scripted: Vec<(Timestamp, QuerySpec)>,
    oracle: Arc<dyn Oracle>,
    last_tick: Timestamp,
}

fn merge_schemas(parts: Vec<SchemaDef>) -> SchemaDef {
    let mut out = SchemaDef { query_priorities: Vec::new(), dimensions: Vec::new(), fact_tables: Vec::new() };
    for s in parts {
        for d in s.dimensions {
            if !out.dimensions.iter().any(|x| x.name == d.name) {
                out.dimensions.push(d);
            }
        }
        for f in s.fact_tables {
            if !out.fact_tables.iter().any(|x| x.name == f.name) {
                out.fact_tables.push(f);
            }
        }
        for p in s.query_priorities {
            if !out.query_priorities.contains(&p) {
                out.query_priorities.push(p);
            }
        }
    }
    out
}

fn open_file_source(path: &Path) -> Result<Box<dyn Source>, HarnessError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    Ok(match ext {
        "csv" => Box::new(DelimitedSource::open(path, b',')?),
        "tsv" => Box::new(DelimitedSource::open(path, b'\t')?),
        "jsonl" | "json" | "ndjson" => Box::new(JsonLinesSource::open(path)?),
        other => {
            return Err(HarnessError::InvalidConfig(format!("{}: unknown source format `{other}`", path.display())))
        }
    })
}

fn prepare(cfg: &ScenarioConfig) -> Result<Prepared, HarnessError> {
    let invalid = |m: String| HarnessError::InvalidConfig(m);
    if cfg.sources.is_empty() {
        return Err(invalid("scenario has no sources".into()));
    }
    if cfg.strategies.is_empty() {
        return Err(invalid("scenario has no strategies".into()));
    }
    if cfg.ticks_per_minute <= 0 {
        return Err(invalid(format!("ticks_per_minute must be positive, got {}", cfg.ticks_per_minute)));
    }
    if cfg.queries.every < 0 {
        return Err(invalid("queries.every must not be negative".into()));
    }
    StrategyKind::validate_ladder(&cfg.strategies)?;
    let oracle = OracleRegistry::builtin().get(&cfg.oracle)?;
    let generators = GeneratorRegistry::builtin();

    let mut gen_schemas = Vec::new();
    for s in &cfg.sources {
        match (&s.generator, &s.file) {
            (Some(g), None) => gen_schemas.push(generators.get(g)?.schema()),
            (None, Some(_)) => {}
            _ => return Err(invalid("each source names exactly one of `generator` or `file`".into())),
        }
    }
    let schema = match &cfg.schema {
        Some(p) => SchemaDef::load(cfg.resolve(p))?,
        None if gen_schemas.len() == cfg.sources.len() => merge_schemas(gen_schemas),
        None => return Err(invalid("file sources need a `schema`".into())),
    };
    let report = rtdw_core::model::validate_schema(&schema);
    if !report.is_valid() {
        return Err(HarnessError::InvalidSchema(report.violations.iter().map(|v| v.to_string()).collect()));
    }

    let mut sources = Vec::new();
    let mut members = Vec::new();
    let mut last_tick = cfg.until.unwrap_or(0);
    for (i, s) in cfg.sources.iter().enumerate() {
        if s.rate == 0 {
            return Err(invalid(format!("source {i}: rate must be positive")));
        }
        let prepared = if let Some(g) = &s.generator {
            let gen = generators.get(g)?;
            let params = GenParams {
                rate: s.rate,
                duration: s
                    .duration
                    .ok_or_else(|| invalid(format!("source {i}: generator sources need a duration")))?,
                seed: s.seed.unwrap_or(cfg.seed.wrapping_add(i as u64)),
                dirty_fraction: s.dirty_fraction,
            };
            params.validate()?;
            members.extend(gen.members(&params));
            PreparedSource {
                label: g.clone(),
                fact: gen.fact().to_string(),
                mapping: s.mapping.clone().unwrap_or_else(|| gen.mapping()),
                rules: s.clean.clone().unwrap_or_else(|| gen.clean_rules()),
                arrivals: gen.generate(&params)?,
            }
        } else {
            let path = cfg.resolve(s.file.as_ref().expect("checked above"));
            let mapping =
                s.mapping.clone().ok_or_else(|| invalid(format!("source {i}: file sources need a mapping")))?;
            let mut src = open_file_source(&path)?;
            let clock = SimClock::new(0);
            let arrivals = extract(src.as_mut(), &clock)
                .enumerate()
                .map(|(n, mut record)| {
                    let tick = 1 + (n / s.rate as usize) as Timestamp;
                    record.extracted_at = tick;
                    Arrival { tick, record }
                })
                .collect();
            PreparedSource {
                label: path.display().to_string(),
                fact: s.fact.clone().unwrap_or_else(|| mapping.fact.clone()),
                mapping,
                rules: s.clean.clone().unwrap_or_default(),
                arrivals,
            }
        };
        if prepared.fact != prepared.mapping.fact {
            return Err(invalid(format!(
                "source {i}: mapping targets `{}`, not `{}`",
                prepared.mapping.fact, prepared.fact
            )));
        }
        prepared.mapping.validate(&schema)?;
        let fields = prepared.mapping.source_fields(&schema)?;
        let fields: Vec<&str> = fields.iter().map(String::as_str).collect();
        for r in &prepared.rules {
            r.validate(&fields, &schema)?;
        }
        last_tick = last_tick.max(prepared.arrivals.last().map_or(0, |a| a.tick));
        sources.push(prepared);
    }
    members.sort_by_key(|m| m.at);

    let rules = match &cfg.alerts {
        Some(p) => {
            let path = cfg.resolve(p);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| HarnessError::Io { path: path.display().to_string(), reason: e.to_string() })?;
            let rules = parse_rules(&text, &schema)?;
            let ladder = CycleLadder::new(cfg.ticks_per_minute);
            for r in &rules {
                ladder.ticks(r.trigger.minutes())?;
            }
            rules
        }
        None => Vec::new(),
    };
    let mut scripted = Vec::new();
    for q in &cfg.queries.script {
        scripted.push((q.at, parse_query(&q.expr, &schema)?));
        last_tick = last_tick.max(q.at);
    }
    Ok(Prepared { schema, sources, members, rules, scripted, oracle, last_tick: last_tick.max(1) })
}

/// Result of a scenario: the report plus each strategy's delivered alerts.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: RunReport,
    pub alerts: Vec<(String, Vec<AlertEvent>)>,
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, HarnessError> {
    execute(cfg).map(|r| r.report)
}

/// Validates `cfg`, then runs every strategy against identical inputs and
/// checks their answers against the oracle and against each other.
pub fn execute(cfg: &ScenarioConfig) -> Result<ScenarioRun, HarnessError> {
    let prep = prepare(cfg)?;
    let mut sources = Vec::new();
    let mut strategies = Vec::new();
    let mut alerts = Vec::new();
    let mut violations = Vec::new();
    for kind in &cfg.strategies {
        let out = run_strategy(cfg, &prep, kind)?;
        if sources.is_empty() {
            sources = out.sources;
        } else if sources != out.sources {
            violations.push(format!("{kind}: cleaning outcome differs from the first strategy"));
        }
        violations.extend(out.violations);
        alerts.push((out.report.strategy.clone(), out.alerts));
        strategies.push(out.report);
    }
    if let Some(first) = strategies.first() {
        for s in &strategies[1..] {
            if s.totals != first.totals {
                violations.push(format!("at-rest totals of {} differ from {}", s.strategy, first.strategy));
            }
        }
    }
    Ok(ScenarioRun {
        report: RunReport {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            clock: cfg.clock,
            sources,
            strategies,
            invariant_violations: violations,
        },
        alerts,
    })
}

struct StrategyOutcome {
    report: StrategyReport,
    sources: Vec<SourceReport>,
    alerts: Vec<AlertEvent>,
    violations: Vec<String>,
}

/// Counts oracle agreement for queries issued against one warehouse.
struct Checker {
    engine: Arc<QueryEngine>,
    oracle: Arc<dyn Oracle>,
    routes: Vec<RouteChoice>,
    queries: u64,
    mismatches: u64,
    overflow_refusals: u64,
    errors: u64,
    examples: Vec<String>,
    latencies: Vec<u64>,
}

impl Checker {
    fn note(&mut self, msg: String) {
        if self.examples.len() < MAX_EXAMPLES {
            self.examples.push(msg);
        }
    }

    fn check(&mut self, snap: &Snapshot, spec: &QuerySpec) {
        let want = match self.oracle.answer(snap, spec) {
            Ok(w) => w,
            Err(e) => {
                self.errors += 1;
                self.note(format!("{spec}: oracle failed: {e}"));
                return;
            }
        };
        for route in self.routes.clone() {
            let started = Instant::now();
            let res = self.engine.execute_at(spec, snap, route.forced());
            self.latencies.push(started.elapsed().as_micros() as u64);
            self.queries += 1;
            match res {
                Ok((rs, _)) => {
                    if let Some(d) = want.diff(&rs) {
                        self.mismatches += 1;
                        self.note(format!("{spec} [{route:?}]: {d}"));
                    }
                }
                Err(QueryError::Storage(StorageError::CacheOverflow { .. })) if route == RouteChoice::ReverseJim => {
                    self.overflow_refusals += 1
                }
                Err(e) => {
                    self.errors += 1;
                    self.note(format!("{spec} [{route:?}]: {e}"));
                }
            }
        }
    }
}

fn nearest_rank(values: &[u64], p: f64) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

fn warehouse_config(cfg: &ScenarioConfig, prep: &Prepared, kind: &StrategyKind) -> WarehouseConfig {
    let mut wc = WarehouseConfig::default();
    if let Some(t) = cfg.ticks_per_day {
        wc = wc.with_ticks_per_day(t);
    }
    let wants_cache =
        matches!(kind, StrategyKind::CacheRouted { .. }) || cfg.queries.routes.contains(&RouteChoice::ReverseJim);
    for f in &prep.schema.fact_tables {
        match cfg.cache.get(&f.name) {
            Some(&cap) => wc = wc.with_cache(&f.name, cap),
            None if wants_cache => wc = wc.with_cache(&f.name, DEFAULT_CACHE_ROWS),
            None => {}
        }
    }
    wc
}

fn apply_members(wh: &Warehouse, members: &[MemberEvent]) -> Result<(), HarnessError> {
    for m in members {
        wh.upsert_member(&m.dimension, m.natural_key.clone(), m.attributes.clone(), m.at)?;
    }
    Ok(())
}

/// Cleans and transforms every source against the current dimensions.
/// Rows keep their arrival tick.
fn ingest(
    wh: &Warehouse,
    prep: &Prepared,
) -> Result<(BTreeMap<String, Vec<TimedRow>>, Vec<SourceReport>, u64), HarnessError> {
    let snap = wh.open_snapshot();
    let mut rows: BTreeMap<String, Vec<TimedRow>> = BTreeMap::new();
    let mut reports = Vec::new();
    for s in &prep.sources {
        let (accepted, cr) = clean(s.arrivals.iter().map(|a| a.record.clone()), &s.rules, Some(&snap));
        let mut by_tick: BTreeMap<Timestamp, Vec<SourceRecord>> = BTreeMap::new();
        for r in accepted {
            by_tick.entry(r.extracted_at).or_default().push(r);
        }
        let mut dead = 0;
        let out = rows.entry(s.fact.clone()).or_default();
        for (tick, recs) in by_tick {
            let t = transform(recs, wh.schema(), &snap, &s.mapping)?;
            dead += t.dead_letters.len() as u64;
            out.extend(t.rows.into_iter().map(|r| TimedRow::new(tick, r)));
        }
        reports.push(SourceReport {
            source: s.label.clone(),
            fact: s.fact.clone(),
            records: cr.input,
            accepted: cr.accepted,
            rejected: cr.rejected,
            snr: cr.snr,
            dead_letters: dead,
        });
    }
    let transformed = rows.values().map(|v| v.len() as u64).sum();
    Ok((rows, reports, transformed))
}

fn totals(wh: &Warehouse) -> Vec<FactTotals> {
    let snap = wh.open_snapshot();
    wh.schema()
        .fact_tables
        .iter()
        .map(|def| {
            let table = snap.table(&def.name).expect("fact exists");
            let mut sums = vec![0i128; def.measures.len()];
            let mut rows = 0;
            for r in table.rows(Stores::ALL) {
                rows += 1;
                for (s, m) in sums.iter_mut().zip(&r.measures) {
                    *s += m.units() as i128;
                }
            }
            FactTotals {
                fact: def.name.clone(),
                rows,
                sums: def
                    .measures
                    .iter()
                    .zip(sums)
                    .map(|(m, u)| MeasureTotal { measure: m.name.clone(), units: u.to_string() })
                    .collect(),
            }
        })
        .collect()
}

fn digest(events: &[AlertEvent]) -> String {
    let mut h = Sha256::new();
    for e in events {
        h.update(
            format!(
                "{}|{}|{}|{:016x}|{}\n",
                e.rule_id,
                e.fired_at,
                e.dedup_key.cycle,
                e.observed_value.to_bits(),
                e.epoch
            )
            .as_bytes(),
        );
    }
    format!("{:x}", h.finalize())
}

fn combine(stats: &[LoaderStats]) -> LoaderStats {
    let mut all = LoaderStats::new("");
    for s in stats {
        all.batches += s.batches;
        all.flips += s.flips;
        all.consolidations += s.consolidations;
        all.drains += s.drains;
        all.rows += s.rows;
        all.rejected_overflow += s.rejected_overflow;
        all.freshness.extend_from_slice(&s.freshness);
        all.pause_micros.extend_from_slice(&s.pause_micros);
    }
    all
}

fn run_strategy(cfg: &ScenarioConfig, prep: &Prepared, kind: &StrategyKind) -> Result<StrategyOutcome, HarnessError> {
    let sim = Arc::new(SimClock::new(0));
    let clock: Arc<dyn Clock> = match cfg.clock {
        ClockMode::Simulated => sim.clone(),
        ClockMode::Wall => Arc::new(WallClock),
    };
    let wh = Arc::new(Warehouse::new(prep.schema.clone(), warehouse_config(cfg, prep, kind), clock)?);
    apply_members(&wh, &prep.members)?;
    let (mut rows, sources, transformed) = ingest(&wh, prep)?;

    let registry = StrategyRegistry::builtin();
    let facts: Vec<String> = rows.keys().cloned().collect();
    for f in &facts {
        kind.validate(&wh, f)?;
    }
    let mut strategies: Vec<Box<dyn LoadStrategy>> =
        facts.iter().map(|_| registry.build(kind)).collect::<Result<_, _>>()?;
    let mut loaders = Vec::new();
    for (s, f) in strategies.iter_mut().zip(&facts) {
        loaders.push(Loader::new(&wh, f, s.as_mut(), rows.remove(f).unwrap_or_default())?);
    }

    let engine = Arc::new(QueryEngine::new(wh.clone()));
    let alerts = AlertEngine::over(engine.clone(), CycleLadder::new(cfg.ticks_per_minute));
    for r in &prep.rules {
        alerts.register_rule(r.clone())?;
    }
    let rx = prep.rules.iter().any(|r| matches!(r.trigger, Trigger::OnEvent { .. })).then(|| wh.subscribe());
    let mut checker = Checker {
        engine: engine.clone(),
        oracle: prep.oracle.clone(),
        routes: cfg.queries.routes.clone(),
        queries: 0,
        mismatches: 0,
        overflow_refusals: 0,
        errors: 0,
        examples: Vec::new(),
        latencies: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(QUERY_STREAM);
    let generator = QueryGenerator::new(wh.schema());
    let horizon = prep.last_tick;
    let last = prep.last_tick.max(loaders.iter().filter_map(|l| l.last_row_tick()).max().unwrap_or(1));

    let stop = Arc::new(AtomicBool::new(false));
    let background = Arc::new(Mutex::new(Vec::<u64>::new()));
    let readers: Vec<_> = if cfg.clock == ClockMode::Wall {
        (0..cfg.readers)
            .map(|i| {
                let (engine, stop, lat) = (engine.clone(), stop.clone(), background.clone());
                let seed = cfg.seed.wrapping_add(1000 + i as u64);
                std::thread::spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut local = Vec::new();
                    while !stop.load(Ordering::Relaxed) {
                        let snap = engine.warehouse().open_snapshot();
                        let spec = QueryGenerator::new(engine.warehouse().schema()).query(&mut rng, &snap, horizon);
                        let started = Instant::now();
                        let _ = engine.execute_at(&spec, &snap, None);
                        local.push(started.elapsed().as_micros() as u64);
                    }
                    lat.lock().extend(local);
                })
            })
            .collect()
    } else {
        Vec::new()
    };

    let started = Instant::now();
    for t in 1..=last {
        sim.set(t);
        for l in &mut loaders {
            l.step(t)?;
        }
        alerts.tick(t);
        if let Some(rx) = &rx {
            alerts.pump(rx);
        }
        let periodic = cfg.queries.every > 0 && t % cfg.queries.every == 0;
        let due: Vec<&QuerySpec> = prep.scripted.iter().filter(|(at, _)| *at == t).map(|(_, q)| q).collect();
        if periodic || !due.is_empty() {
            let snap = wh.open_snapshot();
            if periodic {
                for _ in 0..cfg.queries.random {
                    let spec = generator.query(&mut rng, &snap, horizon);
                    checker.check(&snap, &spec);
                }
            }
            for spec in due {
                checker.check(&snap, spec);
            }
        }
    }
    let mut stats = Vec::new();
    for l in loaders {
        stats.push(l.finish(last)?);
    }
    let elapsed = started.elapsed();
    stop.store(true, Ordering::Relaxed);
    for r in readers {
        let _ = r.join();
    }
    drop(strategies);
    if let Some(rx) = &rx {
        alerts.pump(rx);
    }
    let snap = wh.open_snapshot();
    for _ in 0..cfg.queries.at_rest {
        let spec = generator.query(&mut rng, &snap, horizon);
        checker.check(&snap, &spec);
    }
    drop(snap);

    let mut sink = CollectorSink::new();
    alerts.drain_outbox(&mut sink)?;
    let all = combine(&stats);
    let mut violations = Vec::new();
    let snap = wh.open_snapshot();
    let visible: u64 = facts.iter().map(|f| snap.table(f).map_or(0, |t| t.len(Stores::ALL) as u64)).sum();
    drop(snap);
    if visible != transformed - all.rejected_overflow {
        violations.push(format!(
            "{kind}: {visible} rows visible, expected {} transformed minus {} overflow rejections",
            transformed, all.rejected_overflow
        ));
    }
    let mut latencies = checker.latencies.clone();
    latencies.extend(background.lock().iter().copied());
    let simulated = cfg.clock == ClockMode::Simulated;
    let report = StrategyReport {
        strategy: kind.to_string(),
        rows_loaded: all.rows,
        batches: all.batches,
        flips: all.flips,
        consolidations: all.consolidations,
        drains: all.drains,
        rejected_overflow: all.rejected_overflow,
        lag_mean: all.mean_lag().filter(|_| simulated),
        lag_p95: all.p95_lag().filter(|_| simulated),
        lag_max: all.max_lag().filter(|_| simulated),
        flip_pause_p95_us: all.pause_p95_micros(),
        flip_pause_max_us: all.pause_micros.iter().copied().max(),
        inserts_per_sec: all.rows as f64 / elapsed.as_secs_f64().max(1e-9),
        queries: checker.queries,
        query_p50_us: nearest_rank(&latencies, 50.0),
        query_p95_us: nearest_rank(&latencies, 95.0),
        mismatches: checker.mismatches,
        mismatch_examples: checker.examples,
        overflow_refusals: checker.overflow_refusals,
        query_errors: checker.errors,
        alerts_fired: sink.events.len() as u64,
        alert_digest: digest(&sink.events),
        totals: totals(&wh),
    };
    Ok(StrategyOutcome { report, sources, alerts: sink.events, violations })
}
