use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;

use super::aggregate::{ResultMetadata, ResultSet};
use super::compile::CompiledQuery;
use super::plan::{plan, MergePlan, Route};
use super::route::{RouteContext, RouteRegistry};
use super::{parse_query, Freshness, QueryError, QuerySpec};
use crate::storage::{Epoch, Snapshot, StorageError, Warehouse};

#[derive(Debug, Clone)]
struct MemoEntry {
    result: ResultSet,
    epoch: Epoch,
    freshness: Freshness,
    fact: usize,
    hist_generation: u64,
    dim_generation: u64,
}

impl MemoEntry {
    fn valid_at(&self, snapshot: &Snapshot) -> bool {
        if self.epoch == snapshot.epoch() {
            return true;
        }
        // historical-only answers survive epochs that touched nothing historical
        self.freshness == Freshness::AsOfHistorical
            && self.hist_generation == snapshot.table_at(self.fact).hist_generation()
            && self.dim_generation == snapshot.dim_generation()
    }
}

/// Memo of finished results keyed by canonical query text.
#[derive(Debug)]
pub struct ResultMemo {
    capacity: usize,
    entries: Mutex<HashMap<String, MemoEntry>>,
}

impl ResultMemo {
    pub fn new(capacity: usize) -> Self {
        ResultMemo { capacity: capacity.max(1), entries: Mutex::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: &str, snapshot: &Snapshot) -> Option<ResultSet> {
        let mut entries = self.entries.lock();
        match entries.get(key) {
            Some(e) if e.valid_at(snapshot) => Some(e.result.clone()),
            Some(_) => {
                entries.remove(key);
                None
            }
            None => None,
        }
    }

    fn put(&self, key: String, entry: MemoEntry) {
        let mut entries = self.entries.lock();
        if entries.len() >= self.capacity && !entries.contains_key(&key) {
            entries.clear();
        }
        entries.insert(key, entry);
    }

    /// Drops entries computed before `epoch` that are no longer valid at
    /// `current`.
    pub fn invalidate(&self, epoch: Epoch, current: &Snapshot) {
        self.entries.lock().retain(|_, e| e.epoch >= epoch || e.valid_at(current));
    }
}

/// Executes queries against one warehouse.
pub struct QueryEngine {
    warehouse: Arc<Warehouse>,
    routes: RouteRegistry,
    memo: Option<ResultMemo>,
}

impl QueryEngine {
    /// Result memoization is off until [`QueryEngine::with_memo`].
    pub fn new(warehouse: Arc<Warehouse>) -> Self {
        QueryEngine { warehouse, routes: RouteRegistry::builtin(), memo: None }
    }

    pub fn with_memo(mut self, capacity: usize) -> Self {
        self.memo = Some(ResultMemo::new(capacity));
        self
    }

    pub fn with_routes(mut self, routes: RouteRegistry) -> Self {
        self.routes = routes;
        self
    }

    pub fn warehouse(&self) -> &Arc<Warehouse> {
        &self.warehouse
    }

    pub fn memo(&self) -> Option<&ResultMemo> {
        self.memo.as_ref()
    }

    pub fn parse(&self, text: &str) -> Result<QuerySpec, QueryError> {
        parse_query(text, self.warehouse.schema())
    }

    pub fn plan(&self, spec: &QuerySpec) -> Result<MergePlan, QueryError> {
        let snapshot = self.warehouse.open_snapshot();
        plan(spec, &self.warehouse, &snapshot)
    }

    /// Admits the query (waiting out any flip, in priority order), plans it
    /// and runs the chosen route on one snapshot.
    pub fn execute(&self, spec: &QuerySpec) -> Result<ResultSet, QueryError> {
        self.run_admitted(spec, None)
    }

    /// Like [`QueryEngine::execute`] but with the route fixed. A forced
    /// Reverse-JIM whose slice does not fit the cache fails with
    /// `CacheOverflow`.
    pub fn execute_forced(&self, spec: &QuerySpec, route: Route) -> Result<ResultSet, QueryError> {
        self.run_admitted(spec, Some(route))
    }

    fn run_admitted(&self, spec: &QuerySpec, forced: Option<Route>) -> Result<ResultSet, QueryError> {
        let priority = self.warehouse.schema().priority_of(&spec.fact);
        let admission = self.warehouse.admit(priority);
        let key = (forced.is_none() && self.memo.is_some()).then(|| spec.to_string());
        if let (Some(memo), Some(key)) = (&self.memo, &key) {
            if let Some(mut hit) = memo.get(key, &admission.snapshot) {
                hit.metadata.epoch = admission.snapshot.epoch();
                hit.metadata.waited = admission.waited;
                hit.metadata.memo_hit = true;
                hit.metadata.rows_scanned = 0;
                return Ok(hit);
            }
        }
        let (mut result, _) = self.execute_at(spec, &admission.snapshot, forced)?;
        result.metadata.waited = admission.waited;
        if let (Some(memo), Some(key)) = (&self.memo, key) {
            let snap = &admission.snapshot;
            let fact = snap.schema().fact_index(&spec.fact).expect("resolved fact");
            memo.put(
                key,
                MemoEntry {
                    result: result.clone(),
                    epoch: snap.epoch(),
                    freshness: spec.freshness,
                    fact,
                    hist_generation: snap.table_at(fact).hist_generation(),
                    dim_generation: snap.dim_generation(),
                },
            );
        }
        Ok(result)
    }

    /// Runs `spec` on an already open snapshot, bypassing admission and the
    /// memo. With `forced = None` the planner picks the route, and a
    /// Reverse-JIM that no longer fits falls back to JIM.
    pub fn execute_at(
        &self,
        spec: &QuerySpec,
        snapshot: &Snapshot,
        forced: Option<Route>,
    ) -> Result<(ResultSet, MergePlan), QueryError> {
        let mut merge_plan = plan(spec, &self.warehouse, snapshot)?;
        if let Some(route) = forced {
            merge_plan.route = route;
        }
        let compiled = CompiledQuery::new(spec, snapshot)?;
        let ctx = RouteContext { warehouse: &self.warehouse, snapshot, spec, compiled: &compiled };
        let run = |route: Route| {
            let imp = self.routes.get(route).ok_or_else(|| QueryError::RouteUnavailable(route.name().to_string()))?;
            imp.run(&ctx)
        };
        let output = match run(merge_plan.route) {
            Err(QueryError::Storage(StorageError::CacheOverflow { .. })) if forced.is_none() => {
                merge_plan.route = Route::Jim;
                merge_plan.overflow_avoided = true;
                run(Route::Jim)?
            }
            other => other?,
        };
        let rows_scanned = output.rows_scanned;
        let table = snapshot.table_at(compiled.projection.fact);
        let result = ResultSet {
            group_columns: compiled.group_columns().to_vec(),
            value_columns: compiled.value_columns().to_vec(),
            groups: compiled.finish(output.into_partials()),
            metadata: ResultMetadata {
                epoch: snapshot.epoch(),
                route: merge_plan.route,
                rows_scanned,
                staleness_bound: table.max_load_time(compiled.stores),
                waited: Duration::ZERO,
                memo_hit: false,
            },
        };
        Ok((result, merge_plan))
    }

    /// Drops memoized results older than `epoch` unless they are still
    /// valid at the current version.
    pub fn invalidate_result_cache(&self, epoch: Epoch) {
        if let Some(memo) = &self.memo {
            let current = self.warehouse.open_snapshot();
            memo.invalidate(epoch, &current);
        }
    }
}
