use serde::{Deserialize, Serialize};

use super::strategy::LoadStrategy;
use super::EtlError;
use crate::clock::SimClock;
use crate::storage::{FactRow, Stores, Warehouse};
use crate::value::Timestamp;

/// A fact row and the tick at which it reaches the loader.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedRow {
    pub tick: Timestamp,
    pub row: FactRow,
}

impl TimedRow {
    pub fn new(tick: Timestamp, row: FactRow) -> Self {
        TimedRow { tick, row }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoaderStats {
    pub strategy: String,
    pub batches: u64,
    pub flips: u64,
    pub consolidations: u64,
    pub drains: u64,
    /// Rows made visible.
    pub rows: u64,
    /// Rows dropped after the cache overflowed twice.
    pub rejected_overflow: u64,
    /// Per-tick `now - newest visible load_time`, once anything is visible.
    pub freshness: Vec<i64>,
    pub pause_micros: Vec<u64>,
}

/// Nearest-rank percentile; `None` on empty input.
pub(crate) fn percentile<T: Copy + Ord>(values: &[T], p: f64) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

impl LoaderStats {
    pub fn new(strategy: impl Into<String>) -> Self {
        LoaderStats { strategy: strategy.into(), ..Default::default() }
    }

    pub fn mean_lag(&self) -> Option<f64> {
        (!self.freshness.is_empty())
            .then(|| self.freshness.iter().map(|&l| l as f64).sum::<f64>() / self.freshness.len() as f64)
    }

    pub fn p95_lag(&self) -> Option<i64> {
        percentile(&self.freshness, 95.0)
    }

    pub fn max_lag(&self) -> Option<i64> {
        self.freshness.iter().copied().max()
    }

    pub fn pause_p95_micros(&self) -> Option<u64> {
        percentile(&self.pause_micros, 95.0)
    }
}

/// Steps one strategy over a timed row stream, one tick at a time. The
/// caller owns the clock, so several loaders can share one timeline.
pub struct Loader<'a> {
    wh: &'a Warehouse,
    fact: String,
    index: usize,
    strategy: &'a mut dyn LoadStrategy,
    pending: std::iter::Peekable<std::vec::IntoIter<TimedRow>>,
    last_row_tick: Option<Timestamp>,
    stats: LoaderStats,
}

impl<'a> Loader<'a> {
    pub fn new(
        wh: &'a Warehouse,
        fact: &str,
        strategy: &'a mut dyn LoadStrategy,
        rows: impl IntoIterator<Item = TimedRow>,
    ) -> Result<Self, EtlError> {
        let index = wh.fact_index(fact)?;
        let mut rows: Vec<TimedRow> = rows.into_iter().collect();
        rows.sort_by_key(|r| r.tick);
        let mut stats = LoaderStats::new(strategy.name());
        strategy.start(wh, fact, &mut stats)?;
        Ok(Loader {
            wh,
            fact: fact.to_string(),
            index,
            last_row_tick: rows.last().map(|r| r.tick),
            pending: rows.into_iter().peekable(),
            strategy,
            stats,
        })
    }

    pub fn last_row_tick(&self) -> Option<Timestamp> {
        self.last_row_tick
    }

    pub fn stats(&self) -> &LoaderStats {
        &self.stats
    }

    /// Feeds the rows due by `t`, runs the schedule for `t` and samples
    /// freshness.
    pub fn step(&mut self, t: Timestamp) -> Result<(), EtlError> {
        let (wh, fact) = (self.wh, self.fact.as_str());
        while let Some(r) = self.pending.next_if(|r| r.tick <= t) {
            self.strategy.on_row(wh, fact, r.row, &mut self.stats)?;
        }
        self.strategy.on_tick(wh, fact, t, &mut self.stats)?;
        if let Some(newest) = wh.open_snapshot().table_at(self.index).max_load_time(Stores::ALL) {
            self.stats.freshness.push(t - newest);
        }
        Ok(())
    }

    /// Runs the strategy's final flush at `t`.
    pub fn finish(mut self, t: Timestamp) -> Result<LoaderStats, EtlError> {
        self.strategy.finish(self.wh, &self.fact, t, &mut self.stats)?;
        Ok(self.stats)
    }
}

/// Drives `strategy` over `rows` under a simulated clock. For each tick
/// `t` in `1..=until` (extended to the last row's tick) the clock is set to
/// `t`, rows due by `t` are fed in order, the strategy's schedule runs, and
/// freshness is sampled. The strategy's final flush runs at the last tick.
pub fn run_loader(
    wh: &Warehouse,
    fact: &str,
    strategy: &mut dyn LoadStrategy,
    rows: impl IntoIterator<Item = TimedRow>,
    clock: &SimClock,
    until: Timestamp,
) -> Result<LoaderStats, EtlError> {
    let mut loader = Loader::new(wh, fact, strategy, rows)?;
    let last = loader.last_row_tick().map_or(until, |t| t.max(until));
    for t in 1..=last {
        clock.set(t);
        loader.step(t)?;
    }
    loader.finish(last.max(1))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::etl::{StrategyKind, StrategyRegistry};
    use crate::model::{SchemaDef, SurrogateKey};
    use crate::storage::WarehouseConfig;
    use crate::value::Fixed;

    fn schema() -> SchemaDef {
        SchemaDef::from_toml_str(
            r#"
            [[dimensions]]
            name = "d"
            natural_key = "k"
            scd_policy = "overwrite"
            attributes = [{ name = "k", kind = "integer" }]

            [[fact_tables]]
            name = "f"
            grain = ["d"]
            duration_days = 365
            measures = [{ name = "m", aggregator = "sum" }]
            "#,
        )
        .unwrap()
    }

    fn setup(cache: Option<usize>) -> (Warehouse, Arc<SimClock>) {
        let clock = Arc::new(SimClock::new(0));
        let mut cfg = WarehouseConfig::default();
        if let Some(c) = cache {
            cfg = cfg.with_cache("f", c);
        }
        let wh = Warehouse::new(schema(), cfg, clock.clone()).unwrap();
        wh.upsert_member("d", crate::value::Value::Integer(1), vec![], 0).unwrap();
        (wh, clock)
    }

    fn stream(n: i64) -> Vec<TimedRow> {
        (1..=n).map(|t| TimedRow::new(t, FactRow::new(vec![SurrogateKey(1)], vec![Fixed::from_int(t)], t))).collect()
    }

    fn run(kind: StrategyKind, n: i64, until: i64, cache: Option<usize>) -> (LoaderStats, Warehouse) {
        let (wh, clock) = setup(cache);
        let mut s = StrategyRegistry::builtin().build(&kind).unwrap();
        let stats = run_loader(&wh, "f", s.as_mut(), stream(n), &clock, until).unwrap();
        (stats, wh)
    }

    #[test]
    fn flip_schedule() {
        let (stats, wh) = run(StrategyKind::TrickleAndFlip { cycle: 5, consolidate_daily: false }, 10, 10, None);
        assert_eq!(stats.flips, 2);
        assert_eq!(wh.open_snapshot().table("f").unwrap().len(Stores::ALL), 10);
    }

    #[test]
    fn batch_visibility() {
        let (wh, clock) = setup(None);
        let mut s = StrategyRegistry::builtin().build(&StrategyKind::Batch { interval: 10 }).unwrap();
        let mut stats = LoaderStats::new("batch");
        for r in stream(10) {
            clock.set(r.tick);
            s.on_row(&wh, "f", r.row, &mut stats).unwrap();
            s.on_tick(&wh, "f", r.tick, &mut stats).unwrap();
            let visible = wh.open_snapshot().table("f").unwrap().len(Stores::ALL);
            assert_eq!(visible, if r.tick < 10 { 0 } else { 10 });
        }
    }

    #[test]
    fn closed_form_lags() {
        for (kind, expect) in [
            (StrategyKind::TrickleDirect, 0.0),
            (StrategyKind::TrickleAndFlip { cycle: 5, consolidate_daily: false }, 2.0),
            (StrategyKind::MicroBatch { interval: 10 }, 4.5),
            (StrategyKind::Batch { interval: 100 }, 49.5),
        ] {
            let (stats, _) = run(kind, 1000, 1000, None);
            let lag = stats.mean_lag().unwrap();
            assert!((lag - expect).abs() <= 0.01 * expect.max(1.0), "{kind}: {lag} vs {expect}");
        }
    }

    #[test]
    fn cache_overflow_drains_once() {
        let (stats, wh) = run(StrategyKind::CacheRouted { drain_interval: 100 }, 10, 10, Some(3));
        assert_eq!(stats.rows, 10);
        assert_eq!(stats.rejected_overflow, 0);
        assert!(stats.drains >= 3);
        assert_eq!(wh.open_snapshot().table("f").unwrap().len(Stores::ALL), 10);
    }

    #[test]
    fn overflow_with_pinned_scratch_rejects() {
        let (wh, clock) = setup(Some(2));
        let _lease = wh.reserve_cache_scratch("f", 2).unwrap();
        let mut s = StrategyRegistry::builtin().build(&StrategyKind::CacheRouted { drain_interval: 5 }).unwrap();
        let stats = run_loader(&wh, "f", s.as_mut(), stream(3), &clock, 3).unwrap();
        assert_eq!((stats.rows, stats.rejected_overflow), (0, 3));
    }

    #[test]
    fn validation() {
        let (wh, _) = setup(None);
        assert!(StrategyKind::Batch { interval: 0 }.validate(&wh, "f").is_err());
        assert!(StrategyKind::CacheRouted { drain_interval: 5 }.validate(&wh, "f").is_err());
        assert!(StrategyKind::validate_ladder(&[
            StrategyKind::MicroBatch { interval: 10 },
            StrategyKind::Batch { interval: 10 }
        ])
        .is_err());
        assert!(StrategyRegistry::builtin().create("nope", &Default::default()).is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        assert_eq!(percentile(&[5, 1, 4, 2, 3], 50.0), Some(3));
        assert_eq!(percentile(&(1..=100).collect::<Vec<_>>(), 95.0), Some(95));
        assert_eq!(percentile::<i64>(&[], 95.0), None);
    }
}
