//! Merge routes: the request analyzer, the data imager, the reverse load
//! into cache scratch, and the registry that maps route names to
//! implementations.

use std::collections::HashMap;
use std::sync::Arc;

use super::aggregate::Partials;
use super::compile::{resolve, CompiledQuery, Projection, RowRef};
use super::plan::Route;
use super::{Filter, QueryError, QuerySpec};
use crate::model::{SchemaDef, SurrogateKey};
use crate::storage::{CacheLease, Epoch, Snapshot, Stores, TableSnapshot, Warehouse};
use crate::value::{Fixed, Timestamp};

/// What a query needs from the fact table: the pushed-down filters and
/// the projected key and measure columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RequiredSlice {
    pub fact: String,
    pub filters: Vec<Filter>,
    /// Grain dimensions carried, in fact-table order.
    pub key_columns: Vec<String>,
    /// Measures carried, in fact-table order.
    pub measure_columns: Vec<String>,
    spec: QuerySpec,
    projection: Projection,
}

impl RequiredSlice {
    pub fn spec(&self) -> &QuerySpec {
        &self.spec
    }
}

/// Computes the slice a spec requires.
pub fn jim_analyze(spec: &QuerySpec, schema: &SchemaDef) -> Result<RequiredSlice, QueryError> {
    let projection = resolve(spec, schema)?;
    let def = &schema.fact_tables[projection.fact];
    Ok(RequiredSlice {
        fact: spec.fact.clone(),
        filters: spec.filters.clone(),
        key_columns: projection.keys.iter().map(|&p| def.grain[p].clone()).collect(),
        measure_columns: projection.measures.iter().map(|&m| def.measures[m].name.clone()).collect(),
        spec: spec.clone(),
        projection,
    })
}

/// A projected row: only the columns of a [`RequiredSlice`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SliceRow {
    pub keys: Vec<SurrogateKey>,
    pub measures: Vec<Fixed>,
    pub event_time: Timestamp,
    pub load_time: Timestamp,
}

impl RowRef for SliceRow {
    #[inline]
    fn key(&self, _: usize, slot: usize) -> SurrogateKey {
        self.keys[slot]
    }

    #[inline]
    fn measure(&self, _: usize, slot: usize) -> Fixed {
        self.measures[slot]
    }

    #[inline]
    fn event_time(&self) -> Timestamp {
        self.event_time
    }
}

fn project<R: RowRef + HasLoadTime>(p: &Projection, row: &R) -> SliceRow {
    SliceRow {
        keys: p.keys.iter().enumerate().map(|(slot, &pos)| row.key(pos, slot)).collect(),
        measures: p.measures.iter().enumerate().map(|(slot, &pos)| row.measure(pos, slot)).collect(),
        event_time: row.event_time(),
        load_time: row.load_time(),
    }
}

trait HasLoadTime {
    fn load_time(&self) -> Timestamp;
}

impl HasLoadTime for crate::storage::FactRow {
    fn load_time(&self) -> Timestamp {
        self.load_time
    }
}

/// Real-time slice frozen at one epoch. Contents never change.
#[derive(Debug, Clone, PartialEq)]
pub struct TempTable {
    epoch: Epoch,
    rows: Arc<[SliceRow]>,
    scanned: usize,
}

impl TempTable {
    pub fn epoch(&self) -> Epoch {
        self.epoch
    }

    pub fn rows(&self) -> &[SliceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Historical slice resident in cache scratch space. Dropping it returns
/// the space.
#[derive(Debug)]
pub struct CacheResident {
    epoch: Epoch,
    rows: Vec<SliceRow>,
    scanned: usize,
    _lease: CacheLease,
}

impl CacheResident {
    pub fn epoch(&self) -> Epoch {
        self.epoch
    }

    pub fn rows(&self) -> &[SliceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn rt_stores(stores: Stores) -> Stores {
    Stores { historical: false, ..stores }
}

fn image_with(cq: &CompiledQuery, snapshot: &Snapshot) -> TempTable {
    let table = snapshot.table_at(cq.projection.fact);
    let mut scanned = 0;
    let rows: Vec<SliceRow> = table
        .rows(rt_stores(cq.stores))
        .inspect(|_| scanned += 1)
        .filter(|r| cq.admits(*r))
        .map(|r| project(&cq.projection, r))
        .collect();
    TempTable { epoch: snapshot.epoch(), rows: rows.into(), scanned }
}

fn load_with(
    cq: &CompiledQuery,
    snapshot: &Snapshot,
    warehouse: &Warehouse,
    fact: &str,
) -> Result<CacheResident, QueryError> {
    let table = snapshot.table_at(cq.projection.fact);
    let mut scanned = 0;
    let rows: Vec<SliceRow> = table
        .historical_rows()
        .inspect(|_| scanned += 1)
        .filter(|r| cq.admits(*r))
        .map(|r| project(&cq.projection, r))
        .collect();
    let lease = warehouse.reserve_cache_scratch(fact, rows.len())?;
    Ok(CacheResident { epoch: snapshot.epoch(), rows, scanned, _lease: lease })
}

/// Materializes the real-time side (partition and cache, as the query's
/// freshness allows) of `slice` as of `snapshot`.
pub fn jim_image(slice: &RequiredSlice, snapshot: &Snapshot) -> Result<TempTable, QueryError> {
    let cq = CompiledQuery::new(&slice.spec, snapshot)?;
    Ok(image_with(&cq, snapshot))
}

/// Copies the historical side of `slice` into cache scratch space. Fails
/// with `CacheOverflow` when it does not fit.
pub fn reverse_jim_load(
    slice: &RequiredSlice,
    snapshot: &Snapshot,
    warehouse: &Warehouse,
) -> Result<CacheResident, QueryError> {
    let cq = CompiledQuery::new(&slice.spec, snapshot)?;
    load_with(&cq, snapshot, warehouse, &slice.fact)
}

/// Partial aggregates accumulated by a route.
#[derive(Debug, Default)]
pub struct RouteOutput {
    partials: Partials,
    pub rows_scanned: usize,
}

impl RouteOutput {
    pub(crate) fn into_partials(self) -> Partials {
        self.partials
    }
}

/// Everything a route may touch while running one query.
pub struct RouteContext<'a> {
    pub(crate) warehouse: &'a Warehouse,
    pub(crate) snapshot: &'a Snapshot,
    pub(crate) spec: &'a QuerySpec,
    pub(crate) compiled: &'a CompiledQuery,
}

impl<'a> RouteContext<'a> {
    pub fn warehouse(&self) -> &Warehouse {
        self.warehouse
    }

    pub fn snapshot(&self) -> &Snapshot {
        self.snapshot
    }

    pub fn spec(&self) -> &QuerySpec {
        self.spec
    }

    pub fn table(&self) -> TableSnapshot<'a> {
        self.snapshot.table_at(self.compiled.projection.fact)
    }

    /// Aggregates historical segments in place.
    pub fn scan_historical(&self, out: &mut RouteOutput) {
        if self.compiled.stores.historical {
            out.rows_scanned += self.compiled.accumulate(self.table().historical_rows(), &mut out.partials);
        }
    }

    /// Aggregates the real-time partition and cache in place, as far as
    /// the query's freshness reaches.
    pub fn scan_realtime(&self, out: &mut RouteOutput) {
        let rows = self.table().rows(rt_stores(self.compiled.stores));
        out.rows_scanned += self.compiled.accumulate(rows, &mut out.partials);
    }

    pub fn image(&self) -> TempTable {
        image_with(self.compiled, self.snapshot)
    }

    pub fn scan_temp(&self, temp: &TempTable, out: &mut RouteOutput) {
        out.rows_scanned += temp.scanned;
        self.compiled.accumulate(temp.rows.iter(), &mut out.partials);
    }

    pub fn load_historical(&self) -> Result<CacheResident, QueryError> {
        load_with(self.compiled, self.snapshot, self.warehouse, &self.spec.fact)
    }

    pub fn scan_resident(&self, resident: &CacheResident, out: &mut RouteOutput) {
        out.rows_scanned += resident.scanned;
        self.compiled.accumulate(resident.rows.iter(), &mut out.partials);
    }
}

/// One way of bringing historical and real-time data together.
pub trait MergeRoute: Send + Sync {
    fn route(&self) -> Route;
    fn run(&self, ctx: &RouteContext<'_>) -> Result<RouteOutput, QueryError>;
}

struct DirectRoute;
struct JimRoute;
struct ReverseJimRoute;

impl MergeRoute for DirectRoute {
    fn route(&self) -> Route {
        Route::Direct
    }

    fn run(&self, ctx: &RouteContext<'_>) -> Result<RouteOutput, QueryError> {
        let mut out = RouteOutput::default();
        ctx.scan_historical(&mut out);
        ctx.scan_realtime(&mut out);
        Ok(out)
    }
}

impl MergeRoute for JimRoute {
    fn route(&self) -> Route {
        Route::Jim
    }

    fn run(&self, ctx: &RouteContext<'_>) -> Result<RouteOutput, QueryError> {
        let mut out = RouteOutput::default();
        let temp = ctx.image();
        ctx.scan_historical(&mut out);
        ctx.scan_temp(&temp, &mut out);
        Ok(out)
    }
}

impl MergeRoute for ReverseJimRoute {
    fn route(&self) -> Route {
        Route::ReverseJim
    }

    fn run(&self, ctx: &RouteContext<'_>) -> Result<RouteOutput, QueryError> {
        let mut out = RouteOutput::default();
        let resident = ctx.load_historical()?;
        ctx.scan_resident(&resident, &mut out);
        ctx.scan_realtime(&mut out);
        Ok(out)
    }
}

/// Route implementations by route name.
#[derive(Clone)]
pub struct RouteRegistry {
    routes: HashMap<&'static str, Arc<dyn MergeRoute>>,
}

impl Default for RouteRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl RouteRegistry {
    pub fn empty() -> Self {
        RouteRegistry { routes: HashMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(DirectRoute));
        r.register(Arc::new(JimRoute));
        r.register(Arc::new(ReverseJimRoute));
        r
    }

    /// Installs `imp` for its route, replacing any previous one.
    pub fn register(&mut self, imp: Arc<dyn MergeRoute>) {
        self.routes.insert(imp.route().name(), imp);
    }

    pub fn get(&self, route: Route) -> Option<Arc<dyn MergeRoute>> {
        self.routes.get(route.name()).cloned()
    }

    pub fn by_name(&self, name: &str) -> Option<Arc<dyn MergeRoute>> {
        Route::parse(name).and_then(|r| self.get(r))
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut n: Vec<_> = self.routes.keys().copied().collect();
        n.sort_unstable();
        n
    }
}
