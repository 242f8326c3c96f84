//! Wall-clock measurements: trickle insert throughput under concurrent
//! readers, and flip pause at a given staging size.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rtdw_core::query::{QueryEngine, QuerySpec};
use rtdw_core::storage::{FactRow, Warehouse};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct Throughput {
    pub inserts: u64,
    pub elapsed: Duration,
    pub queries: u64,
    pub query_p95: Option<Duration>,
}

impl Throughput {
    pub fn inserts_per_sec(&self) -> f64 {
        self.inserts as f64 / self.elapsed.as_secs_f64().max(1e-9)
    }
}

/// Trickle-inserts `rows` from one writer while `readers` threads run
/// `queries` round-robin against fresh snapshots.
pub fn trickle_throughput(
    wh: Arc<Warehouse>,
    fact: &str,
    rows: Vec<FactRow>,
    readers: usize,
    queries: Vec<QuerySpec>,
) -> Result<Throughput, HarnessError> {
    let engine = Arc::new(QueryEngine::new(wh.clone()));
    let stop = Arc::new(AtomicBool::new(false));
    let queries = Arc::new(queries);
    let handles: Vec<_> = (0..readers)
        .map(|i| {
            let (engine, stop, queries) = (engine.clone(), stop.clone(), queries.clone());
            thread::spawn(move || {
                let mut lat = Vec::new();
                let mut n = i;
                while !stop.load(Ordering::Relaxed) && !queries.is_empty() {
                    let started = Instant::now();
                    let _ = engine.execute(&queries[n % queries.len()]);
                    lat.push(started.elapsed());
                    n += readers;
                }
                lat
            })
        })
        .collect();
    let inserts = rows.len() as u64;
    let started = Instant::now();
    let mut failure = None;
    for r in rows {
        if let Err(e) = wh.trickle_insert(fact, r) {
            failure = Some(e);
            break;
        }
    }
    let elapsed = started.elapsed();
    stop.store(true, Ordering::Relaxed);
    let mut lat: Vec<Duration> = handles.into_iter().flat_map(|h| h.join().unwrap_or_default()).collect();
    if let Some(e) = failure {
        return Err(e.into());
    }
    lat.sort_unstable();
    let query_p95 = (!lat.is_empty()).then(|| lat[((lat.len() as f64 * 0.95).ceil() as usize).clamp(1, lat.len()) - 1]);
    Ok(Throughput { inserts, elapsed, queries: lat.len() as u64, query_p95 })
}

/// Stages `staged` rows and flips, `flips` times, returning each flip's
/// admission pause.
pub fn flip_pauses(
    wh: &Warehouse,
    fact: &str,
    staged: usize,
    flips: usize,
    mut row: impl FnMut(usize) -> FactRow,
) -> Result<Vec<Duration>, HarnessError> {
    wh.open_staging_cycle(fact)?;
    let mut out = Vec::with_capacity(flips);
    for _ in 0..flips {
        for i in 0..staged {
            wh.stage_insert(fact, row(i))?;
        }
        out.push(wh.flip(fact)?.pause_duration);
    }
    Ok(out)
}
