use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{FactTableDef, SurrogateKey};
use crate::value::{Fixed, Timestamp};

/// One fact: surrogate keys aligned with the grain, measures aligned with
/// the fact table's measures, and two timestamps. Rows are never modified
/// once stored.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactRow {
    pub dim_keys: Vec<SurrogateKey>,
    pub measures: Vec<Fixed>,
    pub event_time: Timestamp,
    pub load_time: Timestamp,
}

impl FactRow {
    pub fn new(dim_keys: Vec<SurrogateKey>, measures: Vec<Fixed>, event_time: Timestamp) -> Self {
        FactRow { dim_keys, measures, event_time, load_time: event_time }
    }

    /// Row identity without the ingestion timestamp; two strategies that
    /// load the same input agree on this even though load times differ.
    pub fn content(&self) -> (Vec<SurrogateKey>, Vec<Fixed>, Timestamp) {
        (self.dim_keys.clone(), self.measures.clone(), self.event_time)
    }
}

/// Column structure of a fact table, used to check that rows and staging
/// tables match their target exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowShape {
    pub keys: usize,
    pub measures: usize,
}

impl RowShape {
    pub fn of(def: &FactTableDef) -> Self {
        RowShape { keys: def.grain.len(), measures: def.measures.len() }
    }

    pub fn matches(&self, row: &FactRow) -> bool {
        row.dim_keys.len() == self.keys && row.measures.len() == self.measures
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId(pub u64);

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seg-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentOrigin {
    BatchLoad,
    Flip,
    Consolidation,
}

/// Sealed, immutable run of historical rows.
#[derive(Debug)]
pub struct Segment {
    id: SegmentId,
    origin: SegmentOrigin,
    rows: Vec<FactRow>,
    // sorted copy of event times for range counting during planning
    event_times: Vec<Timestamp>,
    max_load_time: Timestamp,
}

impl Segment {
    /// Seals a non-empty row set.
    pub(crate) fn seal(id: SegmentId, origin: SegmentOrigin, rows: Vec<FactRow>) -> Arc<Segment> {
        assert!(!rows.is_empty(), "segments are never empty");
        let mut event_times: Vec<Timestamp> = rows.iter().map(|r| r.event_time).collect();
        event_times.sort_unstable();
        let max_load_time = rows.iter().map(|r| r.load_time).max().unwrap_or(Timestamp::MIN);
        Arc::new(Segment { id, origin, rows, event_times, max_load_time })
    }

    pub fn id(&self) -> SegmentId {
        self.id
    }

    pub fn origin(&self) -> SegmentOrigin {
        self.origin
    }

    pub fn rows(&self) -> &[FactRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Inclusive `[min, max]` event time.
    pub fn time_range(&self) -> (Timestamp, Timestamp) {
        (self.event_times[0], self.event_times[self.event_times.len() - 1])
    }

    pub fn max_load_time(&self) -> Timestamp {
        self.max_load_time
    }

    /// Exact number of rows with `lo <= event_time <= hi`.
    pub fn count_in(&self, lo: Timestamp, hi: Timestamp) -> usize {
        if lo > hi {
            return 0;
        }
        let (min, max) = self.time_range();
        if lo <= min && max <= hi {
            return self.rows.len();
        }
        let start = self.event_times.partition_point(|&t| t < lo);
        let end = self.event_times.partition_point(|&t| t <= hi);
        end.saturating_sub(start)
    }
}

/// Append-only row storage shared between the writer and snapshots. A
/// snapshot sees exactly the first `len` rows of the log it captured.
#[derive(Debug, Default)]
pub(crate) struct RowLog {
    rows: boxcar::Vec<FactRow>,
}

#[derive(Debug, Clone)]
pub(crate) struct LogView {
    log: Arc<RowLog>,
    len: usize,
    max_load_time: Option<Timestamp>,
}

impl LogView {
    pub(crate) fn empty() -> Self {
        LogView { log: Arc::new(RowLog::default()), len: 0, max_load_time: None }
    }

    pub(crate) fn from_rows(rows: Vec<FactRow>) -> Self {
        let log = RowLog::default();
        let mut max = None;
        let len = rows.len();
        for r in rows {
            max = max.max(Some(r.load_time));
            log.rows.push(r);
        }
        LogView { log: Arc::new(log), len, max_load_time: max }
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }

    pub(crate) fn max_load_time(&self) -> Option<Timestamp> {
        self.max_load_time
    }

    /// Appends to the shared log. Only the writer calls this, on the view
    /// that is about to become current.
    pub(crate) fn push(&mut self, row: FactRow) {
        debug_assert_eq!(self.log.rows.count(), self.len, "log appended outside the writer");
        self.max_load_time = self.max_load_time.max(Some(row.load_time));
        self.log.rows.push(row);
        self.len += 1;
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = &FactRow> + '_ {
        (0..self.len).map(move |i| &self.log.rows[i])
    }

    /// Splits rows by predicate into (matching, remaining) as fresh logs.
    pub(crate) fn partition(&self, mut pred: impl FnMut(&FactRow) -> bool) -> (Vec<FactRow>, LogView) {
        let (take, keep): (Vec<FactRow>, Vec<FactRow>) = self.iter().cloned().partition(|r| pred(r));
        (take, LogView::from_rows(keep))
    }
}
