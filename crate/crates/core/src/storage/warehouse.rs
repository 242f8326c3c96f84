use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use parking_lot::{Mutex, MutexGuard, RwLock};

use super::gate::AdmissionGate;
use super::row::{FactRow, LogView, RowShape, Segment, SegmentId, SegmentOrigin};
use super::wal::{self, MemberChange, OpCode, Payload, WalError, WalRecord, WalWriter};
use super::{Epoch, StorageError};
use crate::clock::Clock;
use crate::model::{validate_schema, DimensionState, FactTableDef, SchemaDef, SurrogateKey};
use crate::value::{Timestamp, Value, TICKS_PER_DAY};

#[derive(Debug, Clone)]
pub struct WalConfig {
    pub path: PathBuf,
    /// `fsync` after every record.
    pub sync: bool,
}

#[derive(Debug, Clone)]
pub struct WarehouseConfig {
    /// External real-time data cache capacity (rows) per fact table.
    pub cache_capacity: HashMap<String, usize>,
    pub wal: Option<WalConfig>,
    /// Length of a retention day in clock ticks.
    pub ticks_per_day: i64,
}

impl Default for WarehouseConfig {
    fn default() -> Self {
        WarehouseConfig { cache_capacity: HashMap::new(), wal: None, ticks_per_day: TICKS_PER_DAY }
    }
}

impl WarehouseConfig {
    pub fn with_cache(mut self, fact: impl Into<String>, capacity: usize) -> Self {
        self.cache_capacity.insert(fact.into(), capacity);
        self
    }

    pub fn with_wal(mut self, path: impl Into<PathBuf>) -> Self {
        self.wal = Some(WalConfig { path: path.into(), sync: false });
        self
    }

    pub fn with_ticks_per_day(mut self, ticks: i64) -> Self {
        self.ticks_per_day = ticks;
        self
    }
}

/// Which physical stores a read covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stores {
    pub historical: bool,
    pub realtime: bool,
    pub cache: bool,
}

impl Stores {
    pub const ALL: Stores = Stores { historical: true, realtime: true, cache: true };
    pub const HISTORICAL: Stores = Stores { historical: true, realtime: false, cache: false };
    pub const WAREHOUSE: Stores = Stores { historical: true, realtime: true, cache: false };
    pub const REALTIME_SIDE: Stores = Stores { historical: false, realtime: true, cache: true };
}

#[derive(Debug, Clone)]
pub(crate) struct TableVersion {
    segments: Arc<Vec<Arc<Segment>>>,
    realtime: LogView,
    cache: LogView,
    hist_generation: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct Version {
    epoch: Epoch,
    tables: Vec<TableVersion>,
    dimensions: Vec<Arc<DimensionState>>,
    dim_generation: u64,
}

/// A frozen view of every visible store at one epoch. Contents reachable
/// from a snapshot never change; dropping it (or [`Snapshot::release`])
/// lets superseded versions be reclaimed.
pub struct Snapshot {
    version: Arc<Version>,
    schema: Arc<SchemaDef>,
    pins: Arc<AtomicUsize>,
}

impl Clone for Snapshot {
    fn clone(&self) -> Self {
        self.pins.fetch_add(1, Ordering::Relaxed);
        Snapshot { version: self.version.clone(), schema: self.schema.clone(), pins: self.pins.clone() }
    }
}

impl Drop for Snapshot {
    fn drop(&mut self) {
        self.pins.fetch_sub(1, Ordering::Relaxed);
    }
}

impl std::fmt::Debug for Snapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Snapshot").field("epoch", &self.version.epoch).finish()
    }
}

impl Snapshot {
    pub fn epoch(&self) -> Epoch {
        self.version.epoch
    }

    pub fn schema(&self) -> &SchemaDef {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<SchemaDef> {
        &self.schema
    }

    pub fn table(&self, fact: &str) -> Option<TableSnapshot<'_>> {
        self.schema.fact_index(fact).map(|i| self.table_at(i))
    }

    pub fn table_at(&self, index: usize) -> TableSnapshot<'_> {
        TableSnapshot { def: &self.schema.fact_tables[index], index, t: &self.version.tables[index] }
    }

    pub fn dimension(&self, name: &str) -> Option<&DimensionState> {
        self.schema.dimension_index(name).map(|i| &*self.version.dimensions[i])
    }

    pub fn dimension_at(&self, index: usize) -> &DimensionState {
        &self.version.dimensions[index]
    }

    /// Bumped by every committed dimension change.
    pub fn dim_generation(&self) -> u64 {
        self.version.dim_generation
    }

    pub fn release(self) {}
}

/// One fact table inside a snapshot.
#[derive(Clone, Copy)]
pub struct TableSnapshot<'a> {
    def: &'a FactTableDef,
    index: usize,
    t: &'a TableVersion,
}

impl<'a> TableSnapshot<'a> {
    pub fn def(&self) -> &'a FactTableDef {
        self.def
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn segments(&self) -> &'a [Arc<Segment>] {
        &self.t.segments
    }

    pub fn historical_rows(&self) -> impl Iterator<Item = &'a FactRow> + 'a {
        self.t.segments.iter().flat_map(|s| s.rows().iter())
    }

    pub fn realtime_rows(&self) -> impl Iterator<Item = &'a FactRow> + 'a {
        self.t.realtime.iter()
    }

    pub fn cache_rows(&self) -> impl Iterator<Item = &'a FactRow> + 'a {
        self.t.cache.iter()
    }

    pub fn rows(&self, stores: Stores) -> impl Iterator<Item = &'a FactRow> + 'a {
        let t = *self;
        stores
            .historical
            .then(move || t.historical_rows())
            .into_iter()
            .flatten()
            .chain(stores.realtime.then(move || t.realtime_rows()).into_iter().flatten())
            .chain(stores.cache.then(move || t.cache_rows()).into_iter().flatten())
    }

    pub fn historical_len(&self) -> usize {
        self.t.segments.iter().map(|s| s.len()).sum()
    }

    pub fn realtime_len(&self) -> usize {
        self.t.realtime.len()
    }

    pub fn cache_len(&self) -> usize {
        self.t.cache.len()
    }

    pub fn len(&self, stores: Stores) -> usize {
        let mut n = 0;
        if stores.historical {
            n += self.historical_len();
        }
        if stores.realtime {
            n += self.realtime_len();
        }
        if stores.cache {
            n += self.cache_len();
        }
        n
    }

    pub fn is_empty(&self, stores: Stores) -> bool {
        self.len(stores) == 0
    }

    /// Newest load time among rows in the given stores.
    pub fn max_load_time(&self, stores: Stores) -> Option<Timestamp> {
        let mut m = None;
        if stores.historical {
            m = self.t.segments.iter().map(|s| s.max_load_time()).max();
        }
        if stores.realtime {
            m = m.max(self.t.realtime.max_load_time());
        }
        if stores.cache {
            m = m.max(self.t.cache.max_load_time());
        }
        m
    }

    /// Bumped whenever the set of historical segments changes.
    pub fn hist_generation(&self) -> u64 {
        self.t.hist_generation
    }

    /// Rows with `lo <= event_time <= hi` in historical segments, from
    /// per-segment sorted event-time indexes.
    pub fn count_historical_in(&self, lo: Timestamp, hi: Timestamp) -> usize {
        self.t.segments.iter().map(|s| s.count_in(lo, hi)).sum()
    }

    /// Rows with `lo <= event_time <= hi` in the real-time partition and
    /// cache. Unbounded ranges are answered from lengths alone.
    pub fn count_realtime_in(&self, lo: Timestamp, hi: Timestamp, stores: Stores) -> usize {
        let rt_stores = Stores { historical: false, ..stores };
        if lo == Timestamp::MIN && hi == Timestamp::MAX {
            return self.len(rt_stores);
        }
        self.rows(rt_stores).filter(|r| lo <= r.event_time && r.event_time <= hi).count()
    }
}

/// Admitted query: the snapshot it runs on and how long it waited.
#[derive(Debug)]
pub struct Admission {
    pub snapshot: Snapshot,
    pub waited: Duration,
}

#[derive(Debug, Clone)]
pub struct CommitNotice {
    pub epoch: Epoch,
    pub op: OpCode,
    /// Fact table or dimension name.
    pub target: String,
    pub at: Timestamp,
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchCommit {
    pub segment: SegmentId,
    pub epoch: Epoch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipReport {
    pub rows_moved: usize,
    pub segment: Option<SegmentId>,
    /// Time query admission was held closed.
    pub pause_duration: Duration,
    pub epoch: Epoch,
}

#[derive(Debug, Default)]
struct CacheUse {
    rows: usize,
    scratch: usize,
}

#[derive(Debug)]
struct CacheAccount {
    capacity: usize,
    used: Mutex<CacheUse>,
}

impl CacheAccount {
    fn free(&self) -> usize {
        let u = self.used.lock();
        self.capacity - u.rows - u.scratch
    }
}

/// Cache scratch space held by a Reverse-JIM load; freed on drop.
#[derive(Debug)]
pub struct CacheLease {
    account: Arc<CacheAccount>,
    rows: usize,
}

impl CacheLease {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl Drop for CacheLease {
    fn drop(&mut self) {
        self.account.used.lock().scratch -= self.rows;
    }
}

#[derive(Debug)]
struct StagingTable {
    shape: RowShape,
    cycle_start: Timestamp,
    rows: Vec<FactRow>,
}

struct Writer {
    next_segment: u64,
    staging: Vec<Option<StagingTable>>,
    wal: Option<WalWriter>,
}

/// The storage engine: one writer at a time, any number of snapshot readers.
///
/// Every committed mutation produces a new immutable version with the next
/// epoch. Historical data is a list of sealed segments; the real-time
/// partition and the external cache are append-only logs that snapshots
/// read up to the length they captured. Staging tables belong to the writer
/// and are never visible.
pub struct Warehouse {
    schema: Arc<SchemaDef>,
    shapes: Vec<RowShape>,
    clock: Arc<dyn Clock>,
    ticks_per_day: i64,
    current: RwLock<Arc<Version>>,
    writer: Mutex<Writer>,
    gate: AdmissionGate,
    caches: Vec<Option<Arc<CacheAccount>>>,
    pins: Arc<AtomicUsize>,
    subscribers: Mutex<Vec<Sender<CommitNotice>>>,
}

impl Warehouse {
    /// Builds an empty warehouse. When a log path is configured and the file
    /// already holds records, they are replayed first and new commits are
    /// appended after them.
    pub fn new(schema: SchemaDef, config: WarehouseConfig, clock: Arc<dyn Clock>) -> Result<Self, StorageError> {
        let report = validate_schema(&schema);
        if !report.is_valid() {
            return Err(StorageError::InvalidSchema(report.violations));
        }
        for fact in config.cache_capacity.keys() {
            if schema.fact(fact).is_none() {
                return Err(StorageError::UnknownFact(fact.clone()));
            }
        }
        let schema = Arc::new(schema);
        let version = Version {
            epoch: Epoch(0),
            tables: schema
                .fact_tables
                .iter()
                .map(|_| TableVersion {
                    segments: Arc::new(Vec::new()),
                    realtime: LogView::empty(),
                    cache: LogView::empty(),
                    hist_generation: 0,
                })
                .collect(),
            dimensions: schema.dimensions.iter().map(|d| Arc::new(DimensionState::new(Arc::new(d.clone())))).collect(),
            dim_generation: 0,
        };
        let wh = Warehouse {
            shapes: schema.fact_tables.iter().map(RowShape::of).collect(),
            caches: schema
                .fact_tables
                .iter()
                .map(|f| {
                    config
                        .cache_capacity
                        .get(&f.name)
                        .map(|&capacity| Arc::new(CacheAccount { capacity, used: Mutex::new(CacheUse::default()) }))
                })
                .collect(),
            writer: Mutex::new(Writer {
                next_segment: 1,
                staging: schema.fact_tables.iter().map(|_| None).collect(),
                wal: None,
            }),
            schema,
            clock,
            ticks_per_day: config.ticks_per_day,
            current: RwLock::new(Arc::new(version)),
            gate: AdmissionGate::default(),
            pins: Arc::new(AtomicUsize::new(0)),
            subscribers: Mutex::new(Vec::new()),
        };
        if let Some(wal_cfg) = &config.wal {
            if wal_cfg.path.exists() {
                let contents = wal::read_log(&wal_cfg.path, &wh.schema)?;
                if contents.torn_tail > 0 {
                    // drop the torn record so new appends frame correctly
                    let file = std::fs::OpenOptions::new().write(true).open(&wal_cfg.path).map_err(WalError::from)?;
                    file.set_len(contents.valid_len).map_err(WalError::from)?;
                }
                for rec in contents.records {
                    wh.replay(rec)?;
                }
            }
            wh.writer.lock().wal = Some(WalWriter::open(&wal_cfg.path, wal_cfg.sync).map_err(WalError::from)?);
        }
        Ok(wh)
    }

    pub fn schema(&self) -> &SchemaDef {
        &self.schema
    }

    pub fn schema_arc(&self) -> Arc<SchemaDef> {
        self.schema.clone()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn epoch(&self) -> Epoch {
        self.current.read().epoch
    }

    pub fn ticks_per_day(&self) -> i64 {
        self.ticks_per_day
    }

    /// Snapshots currently alive.
    pub fn open_snapshots(&self) -> usize {
        self.pins.load(Ordering::Relaxed)
    }

    pub fn open_snapshot(&self) -> Snapshot {
        let version = self.current.read().clone();
        self.pins.fetch_add(1, Ordering::Relaxed);
        Snapshot { version, schema: self.schema.clone(), pins: self.pins.clone() }
    }

    pub fn release_snapshot(&self, snapshot: Snapshot) {
        drop(snapshot);
    }

    /// Admits a query through the flip gate and pins its snapshot.
    pub fn admit(&self, priority: usize) -> Admission {
        let (snapshot, waited) = self.gate.admit(priority, || self.open_snapshot());
        Admission { snapshot, waited }
    }

    /// Queries currently held at the admission gate.
    pub fn queued_queries(&self) -> usize {
        self.gate.waiting()
    }

    /// Notices for every commit from now on, each with the committed snapshot.
    pub fn subscribe(&self) -> Receiver<CommitNotice> {
        let (tx, rx) = crossbeam_channel::unbounded();
        self.subscribers.lock().push(tx);
        rx
    }

    pub fn fact_index(&self, fact: &str) -> Result<usize, StorageError> {
        self.schema.fact_index(fact).ok_or_else(|| StorageError::UnknownFact(fact.to_string()))
    }

    fn check_row(&self, f: usize, row: &FactRow) -> Result<(), StorageError> {
        let shape = self.shapes[f];
        if shape.matches(row) {
            Ok(())
        } else {
            Err(StorageError::SchemaMismatch {
                fact: self.schema.fact_tables[f].name.clone(),
                expected: (shape.keys, shape.measures),
                found: (row.dim_keys.len(), row.measures.len()),
            })
        }
    }

    fn begin(&self) -> (MutexGuard<'_, Writer>, Version) {
        let w = self.writer.lock();
        let mut next = Version::clone(&self.current.read());
        next.epoch = next.epoch.next();
        (w, next)
    }

    fn log(&self, w: &mut Writer, record: impl FnOnce() -> WalRecord) -> Result<(), StorageError> {
        if let Some(out) = w.wal.as_mut() {
            out.append(&record(), &self.schema).map_err(WalError::from)?;
        }
        Ok(())
    }

    fn publish(&self, next: Version, op: OpCode, target: &str) -> Epoch {
        let epoch = next.epoch;
        let arc = Arc::new(next);
        *self.current.write() = arc.clone();
        let mut subs = self.subscribers.lock();
        if !subs.is_empty() {
            let at = self.clock.now();
            subs.retain(|tx| {
                self.pins.fetch_add(1, Ordering::Relaxed);
                let snapshot = Snapshot { version: arc.clone(), schema: self.schema.clone(), pins: self.pins.clone() };
                tx.send(CommitNotice { epoch, op, target: target.to_string(), at, snapshot }).is_ok()
            });
        }
        epoch
    }

    fn seal(w: &mut Writer, next: &mut Version, f: usize, origin: SegmentOrigin, rows: Vec<FactRow>) -> SegmentId {
        let id = SegmentId(w.next_segment);
        w.next_segment += 1;
        let t = &mut next.tables[f];
        Arc::make_mut(&mut t.segments).push(Segment::seal(id, origin, rows));
        t.hist_generation += 1;
        id
    }

    fn stamp(&self, rows: &mut [FactRow]) {
        let now = self.clock.now();
        for r in rows {
            r.load_time = now;
        }
    }

    fn fact_name(&self, f: usize) -> &str {
        &self.schema.fact_tables[f].name
    }

    // ---- dimensions -------------------------------------------------------

    /// Applies member changes to one dimension as a single commit.
    pub fn upsert_members(
        &self,
        dimension: &str,
        changes: Vec<MemberChange>,
        at: Timestamp,
    ) -> Result<(Vec<SurrogateKey>, Epoch), StorageError> {
        let (mut w, next) = self.begin();
        self.commit_members(&mut w, next, dimension, changes, at)
    }

    pub fn upsert_member(
        &self,
        dimension: &str,
        natural_key: Value,
        attributes: Vec<(String, Value)>,
        at: Timestamp,
    ) -> Result<(SurrogateKey, Epoch), StorageError> {
        let (keys, epoch) = self.upsert_members(dimension, vec![MemberChange { natural_key, attributes }], at)?;
        Ok((keys[0], epoch))
    }

    fn commit_members(
        &self,
        w: &mut Writer,
        mut next: Version,
        dimension: &str,
        changes: Vec<MemberChange>,
        at: Timestamp,
    ) -> Result<(Vec<SurrogateKey>, Epoch), StorageError> {
        let d = self
            .schema
            .dimension_index(dimension)
            .ok_or_else(|| StorageError::UnknownDimension(dimension.to_string()))?;
        let state = Arc::make_mut(&mut next.dimensions[d]);
        let mut keys = Vec::with_capacity(changes.len());
        for ch in &changes {
            keys.push(state.apply_scd_update(&ch.natural_key, &ch.attributes, at)?);
        }
        next.dim_generation += 1;
        self.log(w, || WalRecord {
            epoch: next.epoch,
            op: OpCode::DimensionUpsert,
            target: dimension.to_string(),
            arg: at,
            payload: Payload::Members(changes),
        })?;
        Ok((keys, self.publish(next, OpCode::DimensionUpsert, dimension)))
    }

    // ---- batch and trickle ------------------------------------------------

    /// Seals `rows` into a new historical segment. An empty batch is a no-op
    /// and returns `None` without advancing the epoch.
    pub fn load_batch_segment(&self, fact: &str, mut rows: Vec<FactRow>) -> Result<Option<BatchCommit>, StorageError> {
        let f = self.fact_index(fact)?;
        for r in &rows {
            self.check_row(f, r)?;
        }
        if rows.is_empty() {
            return Ok(None);
        }
        self.stamp(&mut rows);
        let (mut w, next) = self.begin();
        self.commit_batch(&mut w, next, f, rows).map(Some)
    }

    fn commit_batch(
        &self,
        w: &mut Writer,
        mut next: Version,
        f: usize,
        rows: Vec<FactRow>,
    ) -> Result<BatchCommit, StorageError> {
        self.log(w, || wal::fact_record(next.epoch, OpCode::Batch, self.fact_name(f), 0, rows.clone()))?;
        let segment = Self::seal(w, &mut next, f, SegmentOrigin::BatchLoad, rows);
        let epoch = self.publish(next, OpCode::Batch, self.fact_name(f));
        Ok(BatchCommit { segment, epoch })
    }

    /// Appends one row to the real-time partition.
    pub fn trickle_insert(&self, fact: &str, mut row: FactRow) -> Result<Epoch, StorageError> {
        let f = self.fact_index(fact)?;
        self.check_row(f, &row)?;
        row.load_time = self.clock.now();
        let (mut w, next) = self.begin();
        self.commit_trickle(&mut w, next, f, row)
    }

    fn commit_trickle(&self, w: &mut Writer, mut next: Version, f: usize, row: FactRow) -> Result<Epoch, StorageError> {
        self.log(w, || wal::fact_record(next.epoch, OpCode::Trickle, self.fact_name(f), 0, vec![row.clone()]))?;
        next.tables[f].realtime.push(row);
        Ok(self.publish(next, OpCode::Trickle, self.fact_name(f)))
    }

    // ---- trickle and flip -------------------------------------------------

    /// Opens the staging table for `fact` if none is open and returns the
    /// current cycle's start.
    pub fn open_staging_cycle(&self, fact: &str) -> Result<Timestamp, StorageError> {
        let f = self.fact_index(fact)?;
        let mut w = self.writer.lock();
        let now = self.clock.now();
        let shape = self.shapes[f];
        let st = w.staging[f].get_or_insert_with(|| StagingTable { shape, cycle_start: now, rows: Vec::new() });
        if st.shape != RowShape::of(&self.schema.fact_tables[f]) {
            return Err(StorageError::SchemaMismatch {
                fact: fact.to_string(),
                expected: (shape.keys, shape.measures),
                found: (st.shape.keys, st.shape.measures),
            });
        }
        Ok(st.cycle_start)
    }

    /// Adds a row to the open staging table. Staged rows are invisible.
    pub fn stage_insert(&self, fact: &str, mut row: FactRow) -> Result<(), StorageError> {
        let f = self.fact_index(fact)?;
        self.check_row(f, &row)?;
        row.load_time = self.clock.now();
        let mut w = self.writer.lock();
        let st = w.staging[f].as_mut().ok_or_else(|| StorageError::NoActiveStagingCycle(fact.to_string()))?;
        st.rows.push(row);
        Ok(())
    }

    pub fn staged_len(&self, fact: &str) -> Result<usize, StorageError> {
        let f = self.fact_index(fact)?;
        let w = self.writer.lock();
        Ok(w.staging[f].as_ref().map_or(0, |s| s.rows.len()))
    }

    /// Moves every staged row into one new segment atomically and starts a
    /// new cycle. Query admission is closed for the duration. The epoch
    /// advances even when nothing was staged.
    pub fn flip(&self, fact: &str) -> Result<FlipReport, StorageError> {
        let f = self.fact_index(fact)?;
        let started = Instant::now();
        self.gate.pause();
        let result = (|| {
            let (mut w, next) = self.begin();
            let now = self.clock.now();
            let st = w.staging[f].as_mut().ok_or_else(|| StorageError::NoActiveStagingCycle(fact.to_string()))?;
            let rows = std::mem::take(&mut st.rows);
            st.cycle_start = now;
            match self.commit_flip(&mut w, next, f, rows) {
                Ok(ok) => Ok(ok),
                Err((e, rows)) => {
                    // keep the cycle's rows staged if the log write failed
                    if let Some(st) = w.staging[f].as_mut() {
                        st.rows = rows;
                    }
                    Err(e)
                }
            }
        })();
        self.gate.resume();
        let pause_duration = started.elapsed();
        let (rows_moved, segment, epoch) = result?;
        Ok(FlipReport { rows_moved, segment, pause_duration, epoch })
    }

    #[allow(clippy::type_complexity)]
    fn commit_flip(
        &self,
        w: &mut Writer,
        next: Version,
        f: usize,
        rows: Vec<FactRow>,
    ) -> Result<(usize, Option<SegmentId>, Epoch), (StorageError, Vec<FactRow>)> {
        let rows = match w.wal.as_mut() {
            Some(out) => {
                let rec = wal::fact_record(next.epoch, OpCode::Flip, self.fact_name(f), 0, rows);
                let res = out.append(&rec, &self.schema);
                let Payload::Facts(rows) = rec.payload else { unreachable!() };
                if let Err(e) = res {
                    return Err((WalError::from(e).into(), rows));
                }
                rows
            }
            None => rows,
        };
        Ok(self.finish_flip(w, next, f, rows))
    }

    fn finish_flip(
        &self,
        w: &mut Writer,
        mut next: Version,
        f: usize,
        rows: Vec<FactRow>,
    ) -> (usize, Option<SegmentId>, Epoch) {
        let n = rows.len();
        let segment = (n > 0).then(|| Self::seal(w, &mut next, f, SegmentOrigin::Flip, rows));
        let epoch = self.publish(next, OpCode::Flip, self.fact_name(f));
        (n, segment, epoch)
    }

    // ---- external real-time data cache ------------------------------------

    fn cache_account(&self, f: usize) -> Result<&Arc<CacheAccount>, StorageError> {
        self.caches[f].as_ref().ok_or_else(|| StorageError::NoCache(self.fact_name(f).to_string()))
    }

    pub fn has_cache(&self, fact: &str) -> bool {
        self.schema.fact_index(fact).is_some_and(|f| self.caches[f].is_some())
    }

    pub fn cache_capacity(&self, fact: &str) -> Result<usize, StorageError> {
        let f = self.fact_index(fact)?;
        Ok(self.cache_account(f)?.capacity)
    }

    /// Capacity not taken by cached rows or query scratch; zero when no cache
    /// is configured for the fact.
    pub fn cache_free(&self, fact: &str) -> usize {
        match self.schema.fact_index(fact).and_then(|f| self.caches[f].as_ref()) {
            Some(acct) => acct.free(),
            None => 0,
        }
    }

    /// Rows currently held in the cache (cached rows plus scratch).
    pub fn cache_used(&self, fact: &str) -> usize {
        match self.schema.fact_index(fact).and_then(|f| self.caches[f].as_ref()) {
            Some(acct) => {
                let u = acct.used.lock();
                u.rows + u.scratch
            }
            None => 0,
        }
    }

    /// Reserves cache scratch space for `rows` rows.
    pub fn reserve_cache_scratch(&self, fact: &str, rows: usize) -> Result<CacheLease, StorageError> {
        let f = self.fact_index(fact)?;
        let acct = self.cache_account(f)?;
        let mut u = acct.used.lock();
        let free = acct.capacity - u.rows - u.scratch;
        if rows > free {
            return Err(StorageError::CacheOverflow {
                fact: fact.to_string(),
                capacity: acct.capacity,
                requested: rows,
                free,
            });
        }
        u.scratch += rows;
        Ok(CacheLease { account: acct.clone(), rows })
    }

    /// Adds one row to the external cache; fails with `CacheOverflow` at
    /// capacity instead of evicting.
    pub fn cache_insert(&self, fact: &str, mut row: FactRow) -> Result<Epoch, StorageError> {
        let f = self.fact_index(fact)?;
        self.check_row(f, &row)?;
        row.load_time = self.clock.now();
        let (mut w, next) = self.begin();
        self.commit_cache_insert(&mut w, next, f, row)
    }

    fn commit_cache_insert(
        &self,
        w: &mut Writer,
        mut next: Version,
        f: usize,
        row: FactRow,
    ) -> Result<Epoch, StorageError> {
        let acct = self.cache_account(f)?.clone();
        {
            let mut u = acct.used.lock();
            let free = acct.capacity - u.rows - u.scratch;
            if free == 0 {
                return Err(StorageError::CacheOverflow {
                    fact: self.fact_name(f).to_string(),
                    capacity: acct.capacity,
                    requested: 1,
                    free,
                });
            }
            u.rows += 1;
        }
        if let Err(e) =
            self.log(w, || wal::fact_record(next.epoch, OpCode::CacheInsert, self.fact_name(f), 0, vec![row.clone()]))
        {
            acct.used.lock().rows -= 1;
            return Err(e);
        }
        next.tables[f].cache.push(row);
        Ok(self.publish(next, OpCode::CacheInsert, self.fact_name(f)))
    }

    /// Discards cached rows with `load_time <= upto`; returns how many.
    pub fn cache_drain(&self, fact: &str, upto: Timestamp) -> Result<usize, StorageError> {
        let f = self.fact_index(fact)?;
        self.cache_account(f)?;
        let (mut w, next) = self.begin();
        self.commit_cache_drain(&mut w, next, f, upto, false).map(|(n, _)| n)
    }

    /// Moves cached rows with `load_time <= upto` into a historical segment
    /// in one commit.
    pub fn migrate_cache(&self, fact: &str, upto: Timestamp) -> Result<Option<SegmentId>, StorageError> {
        let f = self.fact_index(fact)?;
        self.cache_account(f)?;
        let (mut w, next) = self.begin();
        self.commit_cache_drain(&mut w, next, f, upto, true).map(|(_, s)| s)
    }

    fn commit_cache_drain(
        &self,
        w: &mut Writer,
        mut next: Version,
        f: usize,
        upto: Timestamp,
        migrate: bool,
    ) -> Result<(usize, Option<SegmentId>), StorageError> {
        let (taken, keep) = next.tables[f].cache.partition(|r| r.load_time <= upto);
        if taken.is_empty() {
            return Ok((0, None));
        }
        let op = if migrate { OpCode::CacheMigrate } else { OpCode::CacheDrain };
        self.log(w, || wal::fact_record(next.epoch, op, self.fact_name(f), upto, Vec::new()))?;
        let n = taken.len();
        next.tables[f].cache = keep;
        self.cache_account(f)?.used.lock().rows -= n;
        let segment = migrate.then(|| Self::seal(w, &mut next, f, SegmentOrigin::Consolidation, taken));
        self.publish(next, op, self.fact_name(f));
        Ok((n, segment))
    }

    // ---- consolidation and retention --------------------------------------

    /// Re-homes real-time partition and cache rows with `event_time <
    /// older_than`, together with flip segments lying wholly before the
    /// bound, into one consolidated segment. Returns `None` (no commit) when
    /// nothing qualifies.
    pub fn consolidate(&self, fact: &str, older_than: Timestamp) -> Result<Option<SegmentId>, StorageError> {
        let f = self.fact_index(fact)?;
        let (mut w, next) = self.begin();
        self.commit_consolidate(&mut w, next, f, older_than)
    }

    fn commit_consolidate(
        &self,
        w: &mut Writer,
        mut next: Version,
        f: usize,
        older_than: Timestamp,
    ) -> Result<Option<SegmentId>, StorageError> {
        let t = &next.tables[f];
        let flips: Vec<usize> = t
            .segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.origin() == SegmentOrigin::Flip && s.time_range().1 < older_than)
            .map(|(i, _)| i)
            .collect();
        let (rt_taken, rt_keep) = t.realtime.partition(|r| r.event_time < older_than);
        let (cache_taken, cache_keep) = t.cache.partition(|r| r.event_time < older_than);
        if flips.is_empty() && rt_taken.is_empty() && cache_taken.is_empty() {
            return Ok(None);
        }
        self.log(w, || wal::fact_record(next.epoch, OpCode::Consolidate, self.fact_name(f), older_than, Vec::new()))?;
        let mut rows = Vec::with_capacity(rt_taken.len() + cache_taken.len());
        let t = &mut next.tables[f];
        if !flips.is_empty() {
            let segs = Arc::make_mut(&mut t.segments);
            let mut i = 0;
            segs.retain(|s| {
                let drop = flips.contains(&i);
                i += 1;
                if drop {
                    rows.extend_from_slice(s.rows());
                }
                !drop
            });
        }
        if !rt_taken.is_empty() {
            t.realtime = rt_keep;
        }
        if !cache_taken.is_empty() {
            self.cache_account(f)?.used.lock().rows -= cache_taken.len();
            t.cache = cache_keep;
        }
        rows.extend(rt_taken);
        rows.extend(cache_taken);
        let id = Self::seal(w, &mut next, f, SegmentOrigin::Consolidation, rows);
        self.publish(next, OpCode::Consolidate, self.fact_name(f));
        Ok(Some(id))
    }

    /// Drops historical segments lying wholly before `now - duration`;
    /// segments straddling the horizon are kept. Returns rows dropped.
    pub fn enforce_retention(&self, fact: &str, now: Timestamp) -> Result<usize, StorageError> {
        let f = self.fact_index(fact)?;
        let (mut w, next) = self.begin();
        self.commit_retention(&mut w, next, f, now)
    }

    fn commit_retention(
        &self,
        w: &mut Writer,
        mut next: Version,
        f: usize,
        now: Timestamp,
    ) -> Result<usize, StorageError> {
        let horizon = now.saturating_sub(self.schema.fact_tables[f].duration_days.saturating_mul(self.ticks_per_day));
        let dropped: usize =
            next.tables[f].segments.iter().filter(|s| s.time_range().1 < horizon).map(|s| s.len()).sum();
        if dropped == 0 {
            return Ok(0);
        }
        self.log(w, || wal::fact_record(next.epoch, OpCode::Retention, self.fact_name(f), now, Vec::new()))?;
        let t = &mut next.tables[f];
        Arc::make_mut(&mut t.segments).retain(|s| s.time_range().1 >= horizon);
        t.hist_generation += 1;
        self.publish(next, OpCode::Retention, self.fact_name(f));
        Ok(dropped)
    }

    // ---- replay -----------------------------------------------------------

    fn replay(&self, rec: WalRecord) -> Result<(), StorageError> {
        let (mut w, next) = self.begin();
        if rec.epoch != next.epoch {
            return Err(StorageError::Wal(WalError::Corrupt {
                offset: 0,
                reason: format!("expected epoch {} but log holds {}", next.epoch.0, rec.epoch.0),
            }));
        }
        let w = &mut *w;
        if rec.op == OpCode::DimensionUpsert {
            let Payload::Members(changes) = rec.payload else {
                return Err(corrupt("dimension record without members"));
            };
            self.commit_members(w, next, &rec.target, changes, rec.arg)?;
            return Ok(());
        }
        let f = self.fact_index(&rec.target)?;
        let Payload::Facts(mut rows) = rec.payload else {
            return Err(corrupt("fact record without rows"));
        };
        for r in &rows {
            self.check_row(f, r)?;
        }
        let committed = match rec.op {
            OpCode::Batch => self.commit_batch(w, next, f, rows).is_ok(),
            OpCode::Trickle => {
                self.commit_trickle(w, next, f, rows.pop().ok_or_else(|| corrupt("empty trickle"))?).is_ok()
            }
            OpCode::Flip => {
                self.finish_flip(w, next, f, rows);
                true
            }
            OpCode::CacheInsert => {
                self.commit_cache_insert(w, next, f, rows.pop().ok_or_else(|| corrupt("empty cache insert"))?)?;
                true
            }
            OpCode::CacheDrain => self.commit_cache_drain(w, next, f, rec.arg, false)?.0 > 0,
            OpCode::CacheMigrate => self.commit_cache_drain(w, next, f, rec.arg, true)?.0 > 0,
            OpCode::Consolidate => self.commit_consolidate(w, next, f, rec.arg)?.is_some(),
            OpCode::Retention => self.commit_retention(w, next, f, rec.arg)? > 0,
            OpCode::DimensionUpsert => unreachable!(),
        };
        if !committed {
            return Err(corrupt("logged mutation was a no-op on replay"));
        }
        Ok(())
    }
}

fn corrupt(reason: &str) -> StorageError {
    StorageError::Wal(WalError::Corrupt { offset: 0, reason: reason.to_string() })
}
