use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use parking_lot::Mutex;

use super::{AlertError, AlertEvent, DedupKey};
use crate::value::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct SinkError(pub String);

pub trait AlertSink: Send {
    fn deliver(&mut self, event: &AlertEvent) -> Result<(), SinkError>;
}

/// Keeps delivered events in memory. Can be switched off to simulate an
/// outage.
#[derive(Debug, Default)]
pub struct CollectorSink {
    pub events: Vec<AlertEvent>,
    available: bool,
    fail_after: Option<usize>,
}

impl CollectorSink {
    pub fn new() -> Self {
        CollectorSink { events: Vec::new(), available: true, fail_after: None }
    }

    /// Accepts `n` more events then reports unavailable.
    pub fn failing_after(n: usize) -> Self {
        CollectorSink { fail_after: Some(n), ..Self::new() }
    }

    pub fn set_available(&mut self, available: bool) {
        self.available = available;
        if available {
            self.fail_after = None;
        }
    }
}

impl AlertSink for CollectorSink {
    fn deliver(&mut self, event: &AlertEvent) -> Result<(), SinkError> {
        match self.fail_after.as_mut() {
            _ if !self.available => return Err(SinkError("collector offline".into())),
            Some(0) => return Err(SinkError("collector offline".into())),
            Some(n) => *n -= 1,
            None => {}
        }
        self.events.push(event.clone());
        Ok(())
    }
}

/// Appends one JSON object per event to a file.
pub struct JsonLinesSink {
    out: BufWriter<File>,
}

impl JsonLinesSink {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JsonLinesSink { out: BufWriter::new(file) })
    }
}

impl AlertSink for JsonLinesSink {
    fn deliver(&mut self, event: &AlertEvent) -> Result<(), SinkError> {
        let line = serde_json::to_string(event).map_err(|e| SinkError(e.to_string()))?;
        writeln!(self.out, "{line}").and_then(|_| self.out.flush()).map_err(|e| SinkError(e.to_string()))
    }
}

#[derive(Default)]
struct OutboxState {
    queue: BTreeMap<(Timestamp, u64), AlertEvent>,
    seq: u64,
    queued: HashSet<DedupKey>,
    delivered: HashSet<DedupKey>,
}

/// Pending events ordered by `fired_at`, delivered at most once per dedup
/// key.
#[derive(Default)]
pub struct Outbox {
    state: Mutex<OutboxState>,
}

impl Outbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues `event` unless its key is already queued or delivered.
    pub fn push(&self, event: AlertEvent) -> bool {
        let mut s = self.state.lock();
        if s.delivered.contains(&event.dedup_key) || !s.queued.insert(event.dedup_key.clone()) {
            return false;
        }
        let seq = s.seq;
        s.seq += 1;
        s.queue.insert((event.fired_at, seq), event);
        true
    }

    pub fn len(&self) -> usize {
        self.state.lock().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn delivered_count(&self) -> usize {
        self.state.lock().delivered.len()
    }

    /// Delivers queued events in `fired_at` order. The first failure stops
    /// delivery; that event and everything after it stay queued.
    pub fn drain(&self, sink: &mut dyn AlertSink) -> Result<usize, AlertError> {
        let mut s = self.state.lock();
        let mut delivered = 0;
        while let Some(entry) = s.queue.first_entry() {
            if let Err(e) = sink.deliver(entry.get()) {
                return Err(AlertError::SinkUnavailable { delivered, reason: e.0 });
            }
            let event = entry.remove();
            s.queued.remove(&event.dedup_key);
            s.delivered.insert(event.dedup_key);
            delivered += 1;
        }
        Ok(delivered)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::Epoch;

    fn ev(rule: &str, cycle: i64, at: Timestamp) -> AlertEvent {
        AlertEvent {
            rule_id: rule.into(),
            fired_at: at,
            observed_value: 1.0,
            threshold: 0.0,
            epoch: Epoch(1),
            dedup_key: DedupKey { rule_id: rule.into(), cycle },
        }
    }

    #[test]
    fn ordered_delivery() {
        let o = Outbox::new();
        o.push(ev("a", 3, 30));
        o.push(ev("b", 1, 10));
        o.push(ev("a", 2, 20));
        let mut sink = CollectorSink::new();
        assert_eq!(o.drain(&mut sink).unwrap(), 3);
        assert!(o.is_empty());
        assert_eq!(sink.events.iter().map(|e| e.fired_at).collect::<Vec<_>>(), vec![10, 20, 30]);
        assert_eq!(o.drain(&mut sink).unwrap(), 0);
    }

    #[test]
    fn failure_keeps_rest_queued() {
        let o = Outbox::new();
        for c in 0..3 {
            o.push(ev("a", c, c));
        }
        let mut sink = CollectorSink::failing_after(1);
        assert!(matches!(o.drain(&mut sink), Err(AlertError::SinkUnavailable { delivered: 1, .. })));
        assert_eq!(o.len(), 2);
        assert!(!o.push(ev("a", 0, 0)));
        sink.set_available(true);
        assert_eq!(o.drain(&mut sink).unwrap(), 2);
        let keys: HashSet<_> = sink.events.iter().map(|e| e.dedup_key.clone()).collect();
        assert_eq!(keys.len(), sink.events.len());
    }
}
