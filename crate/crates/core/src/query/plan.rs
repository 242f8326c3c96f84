use std::fmt;

use serde::{Deserialize, Serialize};

use super::compile::{resolve, TimeFilter};
use super::{Freshness, QueryError, QuerySpec};
use crate::storage::{Epoch, Snapshot, Warehouse};

/// Which way data moves to answer a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Scan every visible store in place.
    Direct,
    /// Image the real-time slice into a temporary table beside history.
    Jim,
    /// Load the historical slice into cache scratch and run there.
    ReverseJim,
}

impl Route {
    pub const ALL: [Route; 3] = [Route::Direct, Route::Jim, Route::ReverseJim];

    pub fn name(self) -> &'static str {
        match self {
            Route::Direct => "direct",
            Route::Jim => "jim",
            Route::ReverseJim => "reverse_jim",
        }
    }

    pub fn parse(s: &str) -> Option<Route> {
        Route::ALL.into_iter().find(|r| r.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergePlan {
    pub route: Route,
    pub estimated_rt_rows: usize,
    pub estimated_hist_rows: usize,
    /// Free cache capacity at planning time; `None` without a cache.
    pub cache_free: Option<usize>,
    /// The historical slice was the smaller side but would not fit the cache.
    pub overflow_avoided: bool,
    pub epoch: Epoch,
}

/// The route rule: move the smaller side toward the larger one, unless the
/// historical slice would overflow the cache, in which case JIM.
pub fn choose_route(freshness: Freshness, rt_est: usize, hist_est: usize, cache_free: Option<usize>) -> (Route, bool) {
    if freshness == Freshness::AsOfHistorical {
        return (Route::Direct, false);
    }
    if rt_est <= hist_est {
        return (Route::Jim, false);
    }
    match cache_free {
        Some(free) if hist_est <= free => (Route::ReverseJim, false),
        _ => (Route::Jim, true),
    }
}

/// Plans `spec` on `snapshot`. Estimates are exact row counts per side
/// under the query's event-time bounds only.
pub fn plan(spec: &QuerySpec, warehouse: &Warehouse, snapshot: &Snapshot) -> Result<MergePlan, QueryError> {
    let projection = resolve(spec, snapshot.schema())?;
    let table = snapshot.table_at(projection.fact);
    let tf = TimeFilter::of(spec);
    let stores = spec.freshness.stores();
    let estimated_hist_rows = table.count_historical_in(tf.lo, tf.hi);
    let estimated_rt_rows = table.count_realtime_in(tf.lo, tf.hi, stores);
    let cache_free = warehouse.has_cache(&spec.fact).then(|| warehouse.cache_free(&spec.fact));
    let (route, overflow_avoided) = choose_route(spec.freshness, estimated_rt_rows, estimated_hist_rows, cache_free);
    Ok(MergePlan {
        route,
        estimated_rt_rows,
        estimated_hist_rows,
        cache_free,
        overflow_avoided,
        epoch: snapshot.epoch(),
    })
}
