use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::loader::LoaderStats;
use super::EtlError;
use crate::storage::{FactRow, StorageError, Warehouse};
use crate::value::Timestamp;

/// Moves transformed rows into storage on a tick schedule. The loader calls
/// `start` once, then for every tick feeds that tick's rows through
/// `on_row` before calling `on_tick`, and finally `finish`, after which
/// every accepted row must be visible.
pub trait LoadStrategy: Send {
    fn name(&self) -> &str;

    fn start(&mut self, wh: &Warehouse, fact: &str, stats: &mut LoaderStats) -> Result<(), EtlError> {
        let _ = (wh, fact, stats);
        Ok(())
    }

    fn on_row(&mut self, wh: &Warehouse, fact: &str, row: FactRow, stats: &mut LoaderStats) -> Result<(), EtlError>;

    fn on_tick(&mut self, wh: &Warehouse, fact: &str, now: Timestamp, stats: &mut LoaderStats) -> Result<(), EtlError>;

    fn finish(&mut self, wh: &Warehouse, fact: &str, now: Timestamp, stats: &mut LoaderStats) -> Result<(), EtlError>;
}

/// The built-in strategies with their schedules, as written in scenario
/// files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    Batch {
        interval: i64,
    },
    MicroBatch {
        interval: i64,
    },
    TrickleDirect,
    TrickleAndFlip {
        cycle: i64,
        #[serde(default)]
        consolidate_daily: bool,
    },
    CacheRouted {
        drain_interval: i64,
    },
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Batch { .. } => "batch",
            StrategyKind::MicroBatch { .. } => "micro_batch",
            StrategyKind::TrickleDirect => "trickle_direct",
            StrategyKind::TrickleAndFlip { .. } => "trickle_and_flip",
            StrategyKind::CacheRouted { .. } => "cache_routed",
        }
    }

    pub fn params(&self) -> StrategyParams {
        match *self {
            StrategyKind::Batch { interval } | StrategyKind::MicroBatch { interval } => {
                StrategyParams { interval: Some(interval), consolidate_daily: false }
            }
            StrategyKind::TrickleDirect => StrategyParams::default(),
            StrategyKind::TrickleAndFlip { cycle, consolidate_daily } => {
                StrategyParams { interval: Some(cycle), consolidate_daily }
            }
            StrategyKind::CacheRouted { drain_interval } => {
                StrategyParams { interval: Some(drain_interval), consolidate_daily: false }
            }
        }
    }

    /// The schedule period in ticks; 1 for per-row strategies.
    pub fn interval(&self) -> i64 {
        self.params().interval.unwrap_or(1)
    }

    /// Checks the schedule and that the engine can host the strategy.
    pub fn validate(&self, wh: &Warehouse, fact: &str) -> Result<(), EtlError> {
        wh.fact_index(fact)?;
        if let Some(i) = self.params().interval {
            if i <= 0 {
                return Err(EtlError::InvalidStrategy(format!("{}: interval must be positive, got {i}", self.name())));
            }
        }
        if matches!(self, StrategyKind::CacheRouted { .. }) && !wh.has_cache(fact) {
            return Err(EtlError::Storage(StorageError::NoCache(fact.to_string())));
        }
        Ok(())
    }

    /// Within one run, every micro-batch interval must be shorter than every
    /// batch interval.
    pub fn validate_ladder(kinds: &[StrategyKind]) -> Result<(), EtlError> {
        let micro = kinds.iter().filter_map(|k| match k {
            StrategyKind::MicroBatch { interval } => Some(*interval),
            _ => None,
        });
        let batch = kinds.iter().filter_map(|k| match k {
            StrategyKind::Batch { interval } => Some(*interval),
            _ => None,
        });
        if let (Some(m), Some(b)) = (micro.max(), batch.min()) {
            if m >= b {
                return Err(EtlError::InvalidStrategy(format!(
                    "micro-batch interval {m} must be shorter than batch interval {b}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::TrickleDirect => f.write_str(self.name()),
            StrategyKind::TrickleAndFlip { cycle, consolidate_daily: true } => {
                write!(f, "{}({cycle}, daily)", self.name())
            }
            _ => write!(f, "{}({})", self.name(), self.interval()),
        }
    }
}

/// Untyped parameters handed to a registered strategy constructor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub interval: Option<i64>,
    #[serde(default)]
    pub consolidate_daily: bool,
}

impl StrategyParams {
    fn interval(&self, name: &str) -> Result<i64, EtlError> {
        match self.interval {
            Some(i) if i > 0 => Ok(i),
            Some(i) => Err(EtlError::InvalidStrategy(format!("{name}: interval must be positive, got {i}"))),
            None => Err(EtlError::InvalidStrategy(format!("{name}: interval is required"))),
        }
    }
}

type Constructor = Box<dyn Fn(&StrategyParams) -> Result<Box<dyn LoadStrategy>, EtlError> + Send + Sync>;

/// Strategy constructors by name.
pub struct StrategyRegistry {
    constructors: BTreeMap<String, Constructor>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        StrategyRegistry { constructors: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("batch", |p| Ok(Box::new(Buffered::new("batch", p.interval("batch")?))));
        r.register("micro_batch", |p| Ok(Box::new(Buffered::new("micro_batch", p.interval("micro_batch")?))));
        r.register("trickle_direct", |_| Ok(Box::new(TrickleDirect)));
        r.register("trickle_and_flip", |p| {
            Ok(Box::new(TrickleAndFlip {
                cycle: p.interval("trickle_and_flip")?,
                consolidate_daily: p.consolidate_daily,
            }))
        });
        r.register("cache_routed", |p| Ok(Box::new(CacheRouted { drain_interval: p.interval("cache_routed")? })));
        r
    }

    pub fn register<F>(&mut self, name: impl Into<String>, constructor: F)
    where
        F: Fn(&StrategyParams) -> Result<Box<dyn LoadStrategy>, EtlError> + Send + Sync + 'static,
    {
        self.constructors.insert(name.into(), Box::new(constructor));
    }

    pub fn create(&self, name: &str, params: &StrategyParams) -> Result<Box<dyn LoadStrategy>, EtlError> {
        let make = self.constructors.get(name).ok_or_else(|| EtlError::UnknownStrategy(name.to_string()))?;
        make(params)
    }

    pub fn build(&self, kind: &StrategyKind) -> Result<Box<dyn LoadStrategy>, EtlError> {
        self.create(kind.name(), &kind.params())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.constructors.keys().map(String::as_str)
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Batch and micro-batch: buffer rows, load one segment per interval.
struct Buffered {
    name: &'static str,
    interval: i64,
    buffer: Vec<FactRow>,
}

impl Buffered {
    fn new(name: &'static str, interval: i64) -> Self {
        Buffered { name, interval, buffer: Vec::new() }
    }

    fn flush(&mut self, wh: &Warehouse, fact: &str, stats: &mut LoaderStats) -> Result<(), EtlError> {
        let rows = std::mem::take(&mut self.buffer);
        let n = rows.len() as u64;
        if wh.load_batch_segment(fact, rows)?.is_some() {
            stats.batches += 1;
            stats.rows += n;
        }
        Ok(())
    }
}

impl LoadStrategy for Buffered {
    fn name(&self) -> &str {
        self.name
    }

    fn on_row(&mut self, _: &Warehouse, _: &str, row: FactRow, _: &mut LoaderStats) -> Result<(), EtlError> {
        self.buffer.push(row);
        Ok(())
    }

    fn on_tick(&mut self, wh: &Warehouse, fact: &str, now: Timestamp, stats: &mut LoaderStats) -> Result<(), EtlError> {
        if now % self.interval == 0 {
            self.flush(wh, fact, stats)?;
        }
        Ok(())
    }

    fn finish(&mut self, wh: &Warehouse, fact: &str, _: Timestamp, stats: &mut LoaderStats) -> Result<(), EtlError> {
        self.flush(wh, fact, stats)
    }
}

struct TrickleDirect;

impl LoadStrategy for TrickleDirect {
    fn name(&self) -> &str {
        "trickle_direct"
    }

    fn on_row(&mut self, wh: &Warehouse, fact: &str, row: FactRow, stats: &mut LoaderStats) -> Result<(), EtlError> {
        wh.trickle_insert(fact, row)?;
        stats.rows += 1;
        Ok(())
    }

    fn on_tick(&mut self, _: &Warehouse, _: &str, _: Timestamp, _: &mut LoaderStats) -> Result<(), EtlError> {
        Ok(())
    }

    fn finish(&mut self, _: &Warehouse, _: &str, _: Timestamp, _: &mut LoaderStats) -> Result<(), EtlError> {
        Ok(())
    }
}

struct TrickleAndFlip {
    cycle: i64,
    consolidate_daily: bool,
}

impl TrickleAndFlip {
    fn flip(&self, wh: &Warehouse, fact: &str, stats: &mut LoaderStats) -> Result<(), EtlError> {
        let report = wh.flip(fact)?;
        stats.flips += 1;
        stats.rows += report.rows_moved as u64;
        stats.pause_micros.push(report.pause_duration.as_micros() as u64);
        Ok(())
    }
}

impl LoadStrategy for TrickleAndFlip {
    fn name(&self) -> &str {
        "trickle_and_flip"
    }

    fn start(&mut self, wh: &Warehouse, fact: &str, _: &mut LoaderStats) -> Result<(), EtlError> {
        wh.open_staging_cycle(fact)?;
        Ok(())
    }

    fn on_row(&mut self, wh: &Warehouse, fact: &str, row: FactRow, _: &mut LoaderStats) -> Result<(), EtlError> {
        wh.stage_insert(fact, row)?;
        Ok(())
    }

    fn on_tick(&mut self, wh: &Warehouse, fact: &str, now: Timestamp, stats: &mut LoaderStats) -> Result<(), EtlError> {
        if now % self.cycle == 0 {
            self.flip(wh, fact, stats)?;
        }
        if self.consolidate_daily && now % wh.ticks_per_day() == 0 && wh.consolidate(fact, now)?.is_some() {
            stats.consolidations += 1;
        }
        Ok(())
    }

    fn finish(&mut self, wh: &Warehouse, fact: &str, _: Timestamp, stats: &mut LoaderStats) -> Result<(), EtlError> {
        if wh.staged_len(fact)? > 0 {
            self.flip(wh, fact, stats)?;
        }
        Ok(())
    }
}

/// Rows go to the external cache and are migrated into a historical
/// segment every drain interval. On overflow the cache is migrated once
/// and the insert retried; a second overflow rejects the row.
struct CacheRouted {
    drain_interval: i64,
}

impl CacheRouted {
    fn drain(&self, wh: &Warehouse, fact: &str, stats: &mut LoaderStats) -> Result<(), EtlError> {
        if wh.migrate_cache(fact, Timestamp::MAX)?.is_some() {
            stats.drains += 1;
        }
        Ok(())
    }
}

impl LoadStrategy for CacheRouted {
    fn name(&self) -> &str {
        "cache_routed"
    }

    fn start(&mut self, wh: &Warehouse, fact: &str, _: &mut LoaderStats) -> Result<(), EtlError> {
        wh.cache_capacity(fact)?;
        Ok(())
    }

    fn on_row(&mut self, wh: &Warehouse, fact: &str, row: FactRow, stats: &mut LoaderStats) -> Result<(), EtlError> {
        match wh.cache_insert(fact, row.clone()) {
            Ok(_) => {}
            Err(StorageError::CacheOverflow { .. }) => {
                self.drain(wh, fact, stats)?;
                match wh.cache_insert(fact, row) {
                    Ok(_) => {}
                    Err(StorageError::CacheOverflow { .. }) => {
                        stats.rejected_overflow += 1;
                        return Ok(());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Err(e) => return Err(e.into()),
        }
        stats.rows += 1;
        Ok(())
    }

    fn on_tick(&mut self, wh: &Warehouse, fact: &str, now: Timestamp, stats: &mut LoaderStats) -> Result<(), EtlError> {
        if now % self.drain_interval == 0 {
            self.drain(wh, fact, stats)?;
        }
        Ok(())
    }

    fn finish(&mut self, wh: &Warehouse, fact: &str, _: Timestamp, stats: &mut LoaderStats) -> Result<(), EtlError> {
        self.drain(wh, fact, stats)
    }
}
